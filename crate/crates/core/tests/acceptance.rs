//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use ultraot::exact::label_pairs;
use ultraot::optimizer::LeafRule;
use ultraot::synth::{
    disjoint_pairs, gen_distributions, gen_random_tree, gen_uniform_points, perturb_matrix,
    seeded_rng, tree_metric_distance,
};
use ultraot::tree_ot::{tree_matches, Match};
use ultraot::ultra::strong_triangle_violation;
use ultraot::{
    build_quadtree, euclidean_matrix, exact_wasserstein, l1_embed, linfty_shift,
    mean_relative_error, project_to_ultrametric, sinkhorn, train, train_skip_mst, tree_wasserstein,
    Distribution, Mode, PairSet, SemimetricMatrix, SinkhornConfig, TrainConfig, TrainState,
    UltraTree,
};

type Outcome = Result<String, String>;

const ALPHA: f64 = 0.01;
const EPOCHS: usize = 2000;

fn config() -> TrainConfig {
    TrainConfig {
        learning_rate: ALPHA,
        max_iterations: EPOCHS,
        ..TrainConfig::default()
    }
}

fn target() -> SemimetricMatrix {
    SemimetricMatrix::from_rows(&[
        vec![0., 4., 4., 2.],
        vec![4., 0., 2., 4.],
        vec![4., 2., 0., 4.],
        vec![2., 4., 4., 0.],
    ])
    .unwrap()
}

fn adversarial() -> SemimetricMatrix {
    SemimetricMatrix::from_rows(&[
        vec![0., 2., 4., 4.],
        vec![2., 0., 4., 4.],
        vec![4., 4., 0., 2.],
        vec![4., 4., 2., 0.],
    ])
    .unwrap()
}

fn pairs(d: &SemimetricMatrix, count: usize, sparsity: f64, seed: u64) -> PairSet {
    let dists = gen_distributions(d.n(), 2 * count, sparsity, seed).unwrap();
    label_pairs(d, dists, &disjoint_pairs(count)).unwrap()
}

fn exact_costs(p: &PairSet) -> Vec<f64> {
    p.samples().iter().map(|s| s.w1).collect()
}

fn tree_error(t: &UltraTree, test: &PairSet) -> f64 {
    let approx: Vec<f64> = (0..test.len())
        .map(|k| {
            let (mu, rho, _) = test.pair(k);
            tree_wasserstein(t, mu, rho).unwrap()
        })
        .collect();
    mean_relative_error(&approx, &exact_costs(test))
        .unwrap()
        .mean
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Off-diagonal pairs grouped by LCA, independent of node ids.
fn partition(t: &UltraTree) -> BTreeSet<Vec<(usize, usize)>> {
    let c = t.lca_classes();
    (0..c.n_classes())
        .map(|v| {
            c.members(v)
                .iter()
                .copied()
                .filter(|(i, j)| i != j)
                .collect::<Vec<_>>()
        })
        .filter(|m| !m.is_empty())
        .collect()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let d = target();
    let out = train(&adversarial(), &pairs(&d, 200, 1.0, 101), &config()).unwrap();
    let dev = max_abs_diff(out.matrix.as_array(), d.as_array());
    let err = tree_error(&out.tree, &pairs(&d, 50, 1.0, 102));
    check(
        dev <= 1e-3 && err <= 1e-3,
        format!(
            "max |D̂ - D| = {dev:.2e}, test error {err:.2e}, {} epochs",
            out.iterations
        ),
    )
}

fn criterion_2() -> Outcome {
    let d = target();
    let train_set = pairs(&d, 200, 1.0, 201);
    let test = pairs(&d, 50, 1.0, 202);
    let truth = partition(&project_to_ultrametric(&d).unwrap().0);
    let mut recovered = 0;
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let mut rng = seeded_rng(2000 + trial);
        let mut init = Array2::zeros((4, 4));
        for i in 0..4 {
            for j in (i + 1)..4 {
                let x = rng.random_range(10.0..=20.0);
                init[[i, j]] = x;
                init[[j, i]] = x;
            }
        }
        let out = train(&SemimetricMatrix::new(init).unwrap(), &train_set, &config()).unwrap();
        let err = tree_error(&out.tree, &test);
        worst = worst.max(err);
        if partition(&out.tree) == truth && err <= 1e-3 {
            recovered += 1;
        }
    }
    check(
        recovered == 20,
        format!("{recovered}/20 recovered, worst test error {worst:.2e}"),
    )
}

struct Hypercube {
    learned: f64,
    flowtree: f64,
    quadtree: f64,
}

fn hypercube(dim: usize, seed: u64) -> Hypercube {
    let pts = gen_uniform_points(100, dim, -10.0, 10.0, seed).unwrap();
    let d = euclidean_matrix(&pts);
    let train_set = pairs(&d, 200, 1.0, seed + 1);
    let test = pairs(&d, 50, 1.0, seed + 2);
    let exact = exact_costs(&test);
    let out = train(&d, &train_set, &config()).unwrap();
    let qt = build_quadtree(&pts, seed + 3).unwrap();
    let (mut fl, mut q) = (Vec::new(), Vec::new());
    for k in 0..test.len() {
        let (mu, rho, _) = test.pair(k);
        fl.push(qt.flowtree(&pts, mu, rho).unwrap());
        q.push(qt.wasserstein(mu, rho).unwrap());
    }
    Hypercube {
        learned: tree_error(&out.tree, &test),
        flowtree: mean_relative_error(&fl, &exact).unwrap().mean,
        quadtree: mean_relative_error(&q, &exact).unwrap().mean,
    }
}

fn criterion_3_and_4() -> (Outcome, Outcome) {
    let h2 = hypercube(2, 300);
    let h5 = hypercube(5, 350);
    let line = |h: &Hypercube| {
        format!(
            "learned {:.3}, flowtree {:.3}, quadtree {:.3}",
            h.learned, h.flowtree, h.quadtree
        )
    };
    let c3 = check(
        h2.learned <= 0.21
            && h5.learned <= 0.06
            && h2.learned < h2.flowtree.min(h2.quadtree)
            && h5.learned < h5.flowtree.min(h5.quadtree),
        format!("dim 2: {}; dim 5: {}", line(&h2), line(&h5)),
    );
    let c4 = check(
        h2.flowtree < h2.quadtree && (1.0..=12.0).contains(&h2.quadtree),
        format!(
            "dim 2: flowtree {:.3}, quadtree {:.3}",
            h2.flowtree, h2.quadtree
        ),
    );
    (c3, c4)
}

fn criterion_5() -> Outcome {
    let trials = 20;
    let (mut dist_full, mut dist_skip, mut err_full, mut err_skip) = (0.0, 0.0, 0.0, 0.0);
    for trial in 0..trials {
        let n_nodes = 20 + (trial as usize * 7) % 21;
        let rt = gen_random_tree(n_nodes, 500 + trial).unwrap();
        let truth = &rt.distances;
        let noisy = perturb_matrix(truth, 2.0, 600 + trial).unwrap();
        let train_set = pairs(truth, 200, 1.0, 700 + trial);
        let test = pairs(truth, 50, 1.0, 800 + trial);
        let full = train(&noisy, &train_set, &config()).unwrap();
        let skip = train_skip_mst(&noisy, &train_set, &config()).unwrap();
        dist_full += tree_metric_distance(full.matrix.as_array(), truth.as_array()).unwrap();
        dist_skip += tree_metric_distance(skip.matrix.as_array(), truth.as_array()).unwrap();
        err_full += tree_error(&full.tree, &test);
        err_skip += tree_error(&skip.tree, &test);
    }
    let t = trials as f64;
    let (dist_full, dist_skip, err_full, err_skip) =
        (dist_full / t, dist_skip / t, err_full / t, err_skip / t);
    check(
        dist_full < dist_skip && err_full <= err_skip + 0.02,
        format!(
            "dist full {dist_full:.3} vs skip {dist_skip:.3}; W error full {err_full:.3} vs skip {err_skip:.3}"
        ),
    )
}

fn random_semimetric(n: usize, rng: &mut impl Rng) -> SemimetricMatrix {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let x = rng.random_range(0.0..10.0);
            a[[i, j]] = x;
            a[[j, i]] = x;
        }
    }
    SemimetricMatrix::new(a).unwrap()
}

fn random_distribution(n: usize, rng: &mut impl Rng) -> Distribution {
    let keep = rng.random_range(0.2..=1.0);
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.random::<f64>() < keep {
                rng.random::<f64>()
            } else {
                0.0
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..n)] = 1.0;
    }
    Distribution::from_weights(w).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = seeded_rng(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=16);
        let (t, u) = project_to_ultrametric(&random_semimetric(n, &mut rng)).unwrap();
        for _ in 0..10 {
            let mu = random_distribution(n, &mut rng);
            let rho = random_distribution(n, &mut rng);
            let a = tree_wasserstein(&t, &mu, &rho).unwrap();
            let b = exact_wasserstein(u.as_semimetric(), &mu, &rho)
                .unwrap()
                .cost;
            worst = worst.max((a - b).abs());
        }
    }
    check(
        worst <= 1e-9,
        format!("max |tree - exact| = {worst:.2e} over 500 pairs"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = seeded_rng(7);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(2..=24);
        let (t, _) = project_to_ultrametric(&random_semimetric(n, &mut rng)).unwrap();
        let mu = random_distribution(n, &mut rng);
        let rho = random_distribution(n, &mut rng);
        let l1 = l1_embed(&t, &mu)
            .unwrap()
            .l1_distance(&l1_embed(&t, &rho).unwrap())
            .unwrap();
        worst = worst.max((l1 - tree_wasserstein(&t, &mu, &rho).unwrap()).abs());
    }
    check(
        worst <= 1e-9,
        format!("max |ℓ1 - tree| = {worst:.2e} over 500 instances"),
    )
}

/// Random ultrametric candidates around `d`: projections of jittered copies,
/// shifted by a random offset.
fn candidate(d: &SemimetricMatrix, scale: f64, rng: &mut impl Rng) -> Array2<f64> {
    let n = d.n();
    let mut a = d.as_array().clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let x = (a[[i, j]] + rng.random_range(-scale..=scale)).max(0.0);
            a[[i, j]] = x;
            a[[j, i]] = x;
        }
    }
    let (_, u) = project_to_ultrametric(&SemimetricMatrix::new(a).unwrap()).unwrap();
    let lift = rng.random_range(0.0..=2.0 * scale);
    let mut v = u.as_array().clone();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                v[[i, j]] += lift;
            }
        }
    }
    v
}

fn sup_off_diagonal(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                m = m.max((a[[i, j]] - b[[i, j]]).abs());
            }
        }
    }
    m
}

fn criterion_8() -> Outcome {
    let mut rng = seeded_rng(8);
    for inst in 0..200 {
        let n = rng.random_range(2..=32);
        let d = random_semimetric(n, &mut rng);
        let (_, u) = project_to_ultrametric(&d).unwrap();
        let (da, ua) = (d.as_array(), u.as_array());
        if da.iter().zip(ua.iter()).any(|(x, y)| y > x) {
            return Err(format!("instance {inst}: projection exceeds the input"));
        }
        let (_, again) = project_to_ultrametric(u.as_semimetric()).unwrap();
        if max_abs_diff(again.as_array(), ua) > 1e-9 {
            return Err(format!("instance {inst}: projection is not idempotent"));
        }
        if strong_triangle_violation(ua, 1e-9).is_some() {
            return Err(format!("instance {inst}: strong triangle inequality fails"));
        }
        let s = linfty_shift(&d, &u).unwrap();
        let gap = sup_off_diagonal(da, ua);
        let achieved = sup_off_diagonal(da, s.shifted.as_array());
        if (achieved - 0.5 * gap).abs() > 1e-9 {
            return Err(format!(
                "instance {inst}: shifted distance {achieved} vs half gap {}",
                0.5 * gap
            ));
        }
        for _ in 0..1000 {
            let v = candidate(&d, gap.max(1e-3), &mut rng);
            if sup_off_diagonal(da, &v) < achieved - 1e-9 {
                return Err(format!(
                    "instance {inst}: a random ultrametric beats the shift"
                ));
            }
        }
    }
    Ok("200 instances: subdominant, idempotent, ultrametric, ℓ∞ witness unbeaten by 1000 candidates each".into())
}

/// `½ Σ r²` with couplings frozen to `samples`, around `base`: node offsets
/// `delta` and symmetric entry offsets `x` give
/// `d_ij = base_ij + δ_lca + x_ij − ½δ_i − ½δ_j` off the diagonal.
fn frozen_loss(
    t: &UltraTree,
    base: &Array2<f64>,
    delta: &[f64],
    x: &Array2<f64>,
    samples: &[(Vec<Match>, f64)],
) -> f64 {
    let classes = t.lca_classes();
    let d = |i: usize, j: usize| {
        if i == j {
            0.0
        } else {
            base[[i, j]] + delta[classes.class_of(i, j)] + x[[i, j]]
                - 0.5 * delta[classes.class_of(i, i)]
                - 0.5 * delta[classes.class_of(j, j)]
        }
    };
    samples
        .iter()
        .map(|(m, w)| {
            let pred: f64 = m.iter().map(|m| m.mass * d(m.rho_point, m.mu_point)).sum();
            0.5 * (pred - w) * (pred - w)
        })
        .sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn criterion_9() -> Outcome {
    let mut rng = seeded_rng(9);
    // the frozen loss is quadratic, so central differences are exact up to rounding
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(3..=12);
        let d = random_semimetric(n, &mut rng);
        let reference = random_semimetric(n, &mut rng);
        let count = 8;
        let dists: Vec<Distribution> = (0..2 * count)
            .map(|_| random_distribution(n, &mut rng))
            .collect();
        let p = label_pairs(&reference, dists, &disjoint_pairs(count)).unwrap();
        let state = TrainState::new(&d, Mode::Full).unwrap();
        let t = state.tree();
        let all: Vec<usize> = (0..count).collect();
        let cache = state.couplings(&p, &all);
        let g = state.gradient(&p, &cache, LeafRule::Repair).unwrap();

        let frozen: Vec<_> = (0..count)
            .map(|k| {
                let (mu, rho, w) = p.pair(k);
                (tree_matches(t, mu, rho).unwrap(), w)
            })
            .collect();
        let base = state.matrix();
        let delta0 = vec![0.0; t.n_nodes()];
        let x0 = Array2::zeros((n, n));
        for v in 0..t.n_nodes() {
            let (mut up, mut down) = (delta0.clone(), delta0.clone());
            up[v] += h;
            down[v] -= h;
            let fd = (frozen_loss(t, base, &up, &x0, &frozen)
                - frozen_loss(t, base, &down, &x0, &frozen))
                / (2.0 * h);
            worst = worst.max(rel(g.nodes[v], fd));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (mut up, mut down) = (x0.clone(), x0.clone());
                for (a, b) in [(i, j), (j, i)] {
                    up[[a, b]] += h;
                    down[[a, b]] -= h;
                }
                let fd = (frozen_loss(t, base, &delta0, &up, &frozen)
                    - frozen_loss(t, base, &delta0, &down, &frozen))
                    / (2.0 * h);
                worst = worst.max(rel(g.entries[[i, j]], fd));
            }
        }
    }
    check(
        worst < 1e-5,
        format!("max relative deviation {worst:.2e} over 50 instances"),
    )
}

fn criterion_10() -> Outcome {
    let mut rng = seeded_rng(10);
    let cfg = SinkhornConfig {
        lambda: 1.0,
        tol: 1e-11,
        ..SinkhornConfig::default()
    };
    let (mut worst_marg, mut worst_gap) = (0.0f64, f64::INFINITY);
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let d = random_semimetric(n, &mut rng);
        let mu = random_distribution(n, &mut rng);
        let rho = random_distribution(n, &mut rng);
        let s = sinkhorn(&d, &mu, &rho, &cfg).map_err(|e| format!("sinkhorn failed: {e}"))?;
        let e = exact_wasserstein(&d, &mu, &rho).unwrap();
        worst_marg = worst_marg.max(s.coupling.marginal_error(&mu, &rho));
        worst_gap = worst_gap.min(s.cost - e.cost);
    }
    check(
        worst_marg < 1e-9 && worst_gap >= -1e-9,
        format!("max marginal error {worst_marg:.2e}, min (sinkhorn - exact) {worst_gap:.2e}"),
    )
}

fn criterion_11() -> Outcome {
    let pts = gen_uniform_points(100, 2, -10.0, 10.0, 1100).unwrap();
    let d = euclidean_matrix(&pts);
    let error_at = |s: f64, seed: u64| {
        let out = train(&d, &pairs(&d, 200, s, seed), &config()).unwrap();
        tree_error(&out.tree, &pairs(&d, 50, s, seed + 1))
    };
    let dense = error_at(1.0, 1101);
    let sparse = error_at(0.1, 1103);
    check(
        dense < sparse,
        format!("s = 1.0: {dense:.3}, s = 0.1: {sparse:.3}"),
    )
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |n: usize, start: Instant, r: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {n}: PASS ({detail}) [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({detail}) [{secs:.1}s]");
            }
        }
    };
    let t = Instant::now();
    report(1, t, criterion_1());
    let t = Instant::now();
    report(2, t, criterion_2());
    let t = Instant::now();
    let (c3, c4) = criterion_3_and_4();
    report(3, t, c3);
    report(4, t, c4);
    let t = Instant::now();
    report(5, t, criterion_5());
    for (n, f) in [
        (6, criterion_6 as fn() -> Outcome),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ] {
        let t = Instant::now();
        report(n, t, f());
    }
    let t = Instant::now();
    report(11, t, criterion_11());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
