//! Randomised properties checked against independent oracles.

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ultraot::synth::{gen_uniform_points, seeded_rng};
use ultraot::ultra::strong_triangle_violation;
use ultraot::{
    build_quadtree, diametrical_tree, euclidean_matrix, exact_wasserstein, l1_embed, linfty_shift,
    project_to_ultrametric, sinkhorn, tree_coupling, tree_wasserstein, Distribution,
    SemimetricMatrix, SinkhornConfig, UltraTree, UltrametricMatrix,
};

const TOL: f64 = 1e-9;

fn semimetric(n: usize, rng: &mut ChaCha8Rng) -> SemimetricMatrix {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            // a few exact ties exercise the tie-break
            let x = if rng.random::<f64>() < 0.1 {
                5.0
            } else {
                rng.random_range(0.0..10.0)
            };
            a[[i, j]] = x;
            a[[j, i]] = x;
        }
    }
    SemimetricMatrix::new(a).unwrap()
}

fn distribution(n: usize, max_support: usize, rng: &mut ChaCha8Rng) -> Distribution {
    let k = rng.random_range(1..=max_support.min(n));
    let mut w = vec![0.0; n];
    for i in rand::seq::index::sample(rng, n, k) {
        w[i] = rng.random_range(0.01..1.0);
    }
    Distribution::from_weights(w).unwrap()
}

fn ultrametric(n: usize, rng: &mut ChaCha8Rng) -> (UltraTree, UltrametricMatrix) {
    project_to_ultrametric(&semimetric(n, rng)).unwrap()
}

/// Minimum transport cost over all basic feasible plans, found by enumerating
/// spanning-tree supports of the bipartite support graph.
fn brute_force_w1(d: &SemimetricMatrix, mu: &Distribution, rho: &Distribution) -> f64 {
    let rows: Vec<usize> = (0..d.n()).filter(|&i| rho[i] > 0.0).collect();
    let cols: Vec<usize> = (0..d.n()).filter(|&j| mu[j] > 0.0).collect();
    let (m, k) = (rows.len(), cols.len());
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|a| (0..k).map(move |b| (a, b))).collect();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    combinations(cells.len(), m + k - 1, 0, &mut chosen, &mut |subset| {
        let mut r: Vec<f64> = rows.iter().map(|&i| rho[i]).collect();
        let mut c: Vec<f64> = cols.iter().map(|&j| mu[j]).collect();
        let mut open: Vec<(usize, usize)> = subset.iter().map(|&s| cells[s]).collect();
        let mut cost = 0.0;
        while !open.is_empty() {
            // a row or column touching exactly one open cell fixes that cell
            let pick = open.iter().position(|&(a, b)| {
                open.iter().filter(|&&(x, _)| x == a).count() == 1
                    || open.iter().filter(|&&(_, y)| y == b).count() == 1
            });
            let Some(p) = pick else { return };
            let (a, b) = open.swap_remove(p);
            let row_leaf = open.iter().all(|&(x, _)| x != a);
            let v = if row_leaf { r[a] } else { c[b] };
            if v < -1e-12 {
                return;
            }
            r[a] -= v;
            c[b] -= v;
            cost += v * d.get(rows[a], cols[b]);
        }
        if r.iter().chain(&c).all(|x| x.abs() < 1e-12) {
            best = best.min(cost);
        }
    });
    best
}

fn combinations(
    n: usize,
    k: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    if chosen.len() == k {
        f(chosen);
        return;
    }
    for s in start..n {
        if n - s < k - chosen.len() {
            break;
        }
        chosen.push(s);
        combinations(n, k, s + 1, chosen, f);
        chosen.pop();
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_the_subdominant_ultrametric(seed in any::<u64>(), n in 2usize..=24) {
        let mut rng = seeded_rng(seed);
        let d = semimetric(n, &mut rng);
        let (tree, u) = project_to_ultrametric(&d).unwrap();
        prop_assert!(strong_triangle_violation(u.as_array(), TOL).is_none());
        for i in 0..n {
            for j in 0..n {
                prop_assert!(u.get(i, j) <= d.get(i, j));
                prop_assert!((tree.tree_distance(i, j).unwrap() - u.get(i, j)).abs() < TOL);
            }
        }
        let (_, again) = project_to_ultrametric(u.as_semimetric()).unwrap();
        prop_assert_eq!(again.as_array(), u.as_array());

        // any ultrametric below d lies below the projection
        let lower = semimetric(n, &mut rng);
        let floor = SemimetricMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| {
            d.get(i, j).min(lower.get(i, j))
        })).unwrap();
        let (_, v) = project_to_ultrametric(&floor).unwrap();
        for (a, b) in v.as_array().iter().zip(u.as_array().iter()) {
            prop_assert!(a <= b);
        }
    }

    #[test]
    fn shift_halves_the_gap(seed in any::<u64>(), n in 2usize..=16) {
        let mut rng = seeded_rng(seed);
        let d = semimetric(n, &mut rng);
        let (_, u) = project_to_ultrametric(&d).unwrap();
        let s = linfty_shift(&d, &u).unwrap();
        prop_assert!(strong_triangle_violation(s.shifted.as_array(), TOL).is_none());
        let mut gap = 0.0f64;
        let mut achieved = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    gap = gap.max(d.get(i, j) - u.get(i, j));
                    achieved = achieved.max((d.get(i, j) - s.shifted.get(i, j)).abs());
                }
            }
        }
        prop_assert!((achieved - 0.5 * gap).abs() < TOL);
        prop_assert!((s.shift - 0.5 * gap).abs() < TOL);
    }

    #[test]
    fn diametrical_tree_reproduces_the_matrix(seed in any::<u64>(), n in 2usize..=20) {
        let mut rng = seeded_rng(seed);
        let (_, u) = ultrametric(n, &mut rng);
        let t = diametrical_tree(&u).unwrap();
        let back = t.to_matrix().unwrap();
        for (a, b) in back.as_array().iter().zip(u.as_array().iter()) {
            prop_assert!((a - b).abs() < TOL);
        }
        let mu = distribution(n, n, &mut rng);
        let rho = distribution(n, n, &mut rng);
        let (p, _) = project_to_ultrametric(u.as_semimetric()).unwrap();
        let a = tree_wasserstein(&t, &mu, &rho).unwrap();
        let b = tree_wasserstein(&p, &mu, &rho).unwrap();
        prop_assert!((a - b).abs() < TOL);
    }

    #[test]
    fn tree_distance_matches_exact(seed in any::<u64>(), n in 2usize..=16) {
        let mut rng = seeded_rng(seed);
        let (t, u) = ultrametric(n, &mut rng);
        let mu = distribution(n, n, &mut rng);
        let rho = distribution(n, n, &mut rng);
        let w = tree_wasserstein(&t, &mu, &rho).unwrap();
        let e = exact_wasserstein(u.as_semimetric(), &mu, &rho).unwrap();
        prop_assert!((w - e.cost).abs() < TOL, "tree {w} vs exact {}", e.cost);

        let c = tree_coupling(&t, &mu, &rho).unwrap();
        prop_assert!(c.marginal_error(&mu, &rho) < TOL);
        prop_assert!((c.cost(u.as_array()) - w).abs() < TOL);
    }

    #[test]
    fn embedding_is_an_l1_isometry(seed in any::<u64>(), n in 2usize..=24) {
        let mut rng = seeded_rng(seed);
        let (t, _) = ultrametric(n, &mut rng);
        let mu = distribution(n, n, &mut rng);
        let rho = distribution(n, n, &mut rng);
        let l1 = l1_embed(&t, &mu).unwrap().l1_distance(&l1_embed(&t, &rho).unwrap()).unwrap();
        prop_assert!((l1 - tree_wasserstein(&t, &mu, &rho).unwrap()).abs() < TOL);
    }

    #[test]
    fn tree_distance_is_a_metric(seed in any::<u64>(), n in 2usize..=16) {
        let mut rng = seeded_rng(seed);
        let (t, _) = ultrametric(n, &mut rng);
        let p: Vec<Distribution> = (0..3).map(|_| distribution(n, n, &mut rng)).collect();
        let w = |a: usize, b: usize| tree_wasserstein(&t, &p[a], &p[b]).unwrap();
        prop_assert!(w(0, 0).abs() < TOL);
        prop_assert!((w(0, 1) - w(1, 0)).abs() < TOL);
        prop_assert!(w(0, 2) <= w(0, 1) + w(1, 2) + TOL);
        prop_assert!(w(0, 1) >= 0.0);
    }

    #[test]
    fn exact_matches_vertex_enumeration(seed in any::<u64>(), n in 2usize..=8) {
        let mut rng = seeded_rng(seed);
        let d = semimetric(n, &mut rng);
        let mu = distribution(n, 4, &mut rng);
        let rho = distribution(n, 4, &mut rng);
        let e = exact_wasserstein(&d, &mu, &rho).unwrap();
        let b = brute_force_w1(&d, &mu, &rho);
        prop_assert!((e.cost - b).abs() < TOL, "solver {} vs enumeration {b}", e.cost);
        prop_assert!(e.coupling.marginal_error(&mu, &rho) < TOL);
    }

    #[test]
    fn sinkhorn_is_feasible_and_not_below_exact(seed in any::<u64>(), n in 2usize..=20, lambda in 0.05f64..5.0) {
        let mut rng = seeded_rng(seed);
        let d = semimetric(n, &mut rng);
        let mu = distribution(n, n, &mut rng);
        let rho = distribution(n, n, &mut rng);
        let cfg = SinkhornConfig { lambda, max_iter: 100_000, tol: 1e-11 };
        let s = sinkhorn(&d, &mu, &rho, &cfg).unwrap();
        let e = exact_wasserstein(&d, &mu, &rho).unwrap();
        prop_assert!(s.coupling.marginal_error(&mu, &rho) < 1e-9);
        prop_assert!(s.cost >= e.cost - TOL);
    }

    #[test]
    fn flowtree_is_not_below_exact(seed in any::<u64>(), n in 2usize..=30, dim in 1usize..=4) {
        let pts = gen_uniform_points(n, dim, -10.0, 10.0, seed).unwrap();
        let d = euclidean_matrix(&pts);
        let qt = build_quadtree(&pts, seed ^ 1).unwrap();
        let mut rng = seeded_rng(seed ^ 2);
        let mu = distribution(n, n, &mut rng);
        let rho = distribution(n, n, &mut rng);
        let e = exact_wasserstein(&d, &mu, &rho).unwrap().cost;
        prop_assert!(qt.flowtree(&pts, &mu, &rho).unwrap() >= e - TOL);
    }
}

#[test]
fn quadtree_structure() {
    for seed in 0..10 {
        let dim = 1 + seed as usize % 3;
        let pts = gen_uniform_points(50, dim, -10.0, 10.0, seed).unwrap();
        let qt = build_quadtree(&pts, seed).unwrap();
        let cells = qt.cells();
        assert_eq!(cells[0].parent, None);
        assert_eq!(cells[0].level, 0);
        assert!((cells[0].side - 2.0 * qt.spread()).abs() < 1e-12);
        for (v, c) in cells.iter().enumerate() {
            assert_eq!(c.children.is_empty(), c.point.is_some(), "cell {v}");
            assert!(c.children.len() <= 1 << dim);
            for &ch in &c.children {
                let child = &cells[ch];
                assert_eq!(child.parent, Some(v));
                assert_eq!(child.level, c.level + 1);
                assert_eq!(child.side, 0.5 * c.side);
                for k in 0..dim {
                    let off = child.corner[k] - c.corner[k];
                    let tol = 1e-9 * c.side;
                    assert!(
                        off.abs() < tol || (off - child.side).abs() < tol,
                        "child corner off the grid"
                    );
                }
            }
        }
        assert_eq!(
            cells.iter().filter(|c| c.point.is_some()).count(),
            qt.n_support()
        );
        for i in 0..pts.n() {
            // the point lies inside its leaf and every ancestor
            let x: Vec<f64> = pts.point(i).iter().map(|v| v / qt.unit()).collect();
            let mut v = Some(qt.leaf_of_input(i));
            while let Some(id) = v {
                let c = &cells[id];
                for k in 0..dim {
                    assert!(x[k] >= c.corner[k] && x[k] < c.corner[k] + c.side);
                }
                v = c.parent;
            }
        }
        let bound = ((dim as f64).sqrt() * qt.spread()).log2().ceil() as u32 + 2;
        assert!(qt.depth() <= bound, "depth {} above {bound}", qt.depth());
    }
}
