//! Synthetic data: point clouds, random distributions, random unit-weight
//! trees, symmetric Gaussian noise and the tree-metric distance.
//!
//! Every generator is a pure function of its parameters and a `u64` seed fed
//! to ChaCha8, so datasets reproduce bit-for-bit across platforms.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::distr::{OpenClosed01, Uniform};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::metric::{Distribution, PointCloud, SemimetricMatrix};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_n(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    Ok(())
}

pub fn gen_uniform_points(n: usize, dim: usize, lo: f64, hi: f64, seed: u64) -> Result<PointCloud> {
    check_n(n)?;
    let range = Uniform::new_inclusive(lo, hi)
        .map_err(|e| Error::InvalidParameter(format!("bad range [{lo}, {hi}]: {e}")))?;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "need lo < hi, got [{lo}, {hi}]"
        )));
    }
    let mut rng = seeded_rng(seed);
    PointCloud::new(Array2::from_shape_simple_fn((n, dim), || rng.sample(range)))
}

pub fn gen_gaussian_points(n: usize, dim: usize, seed: u64) -> Result<PointCloud> {
    check_n(n)?;
    let mut rng = seeded_rng(seed);
    PointCloud::new(Array2::from_shape_simple_fn((n, dim), || {
        rng.sample::<f64, _>(StandardNormal)
    }))
}

/// `count` distributions, each uniform-random on a random support of size
/// `⌈s·n⌉` with i.i.d. `(0, 1]` weights.
pub fn gen_distributions(
    n: usize,
    count: usize,
    sparsity: f64,
    seed: u64,
) -> Result<Vec<Distribution>> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sparsity must lie in (0, 1], got {sparsity}"
        )));
    }
    if n == 0 {
        return Err(Error::TooFewPoints(n));
    }
    let k = ((sparsity * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|_| {
            let mut w = vec![0.0; n];
            for i in index::sample(&mut rng, n, k) {
                w[i] = rng.sample(OpenClosed01);
            }
            Distribution::from_weights(w)
        })
        .collect()
}

/// Index pairs `(2k, 2k+1)`: each pair uses two fresh distributions.
pub fn disjoint_pairs(count: usize) -> Vec<(usize, usize)> {
    (0..count).map(|k| (2 * k, 2 * k + 1)).collect()
}

/// Random recursive tree with unit edges, restricted to its leaves.
#[derive(Clone, Debug)]
pub struct RandomTree {
    /// `parent[v]` for `v ≥ 1`; vertex 0 is the root of the attachment process.
    pub parent: Vec<Option<usize>>,
    /// Degree-1 vertices, ascending; point `i` of `distances` is `leaves[i]`.
    pub leaves: Vec<usize>,
    pub distances: SemimetricMatrix,
}

/// Vertex `k` attaches to a uniform vertex among `0..k`.
pub fn gen_random_tree(n_nodes: usize, seed: u64) -> Result<RandomTree> {
    if n_nodes < 3 {
        return Err(Error::InvalidParameter(format!(
            "a random tree needs at least 3 nodes, got {n_nodes}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut parent = vec![None; n_nodes];
    let mut adj = vec![Vec::new(); n_nodes];
    for k in 1..n_nodes {
        let p = rng.random_range(0..k);
        parent[k] = Some(p);
        adj[k].push(p);
        adj[p].push(k);
    }
    let leaves: Vec<usize> = (0..n_nodes).filter(|&v| adj[v].len() == 1).collect();
    let m = leaves.len();
    let mut d = Array2::zeros((m, m));
    for (a, &src) in leaves.iter().enumerate() {
        let mut dist = vec![usize::MAX; n_nodes];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
        for (b, &dst) in leaves.iter().enumerate() {
            d[[a, b]] = dist[dst] as f64;
        }
    }
    Ok(RandomTree {
        parent,
        leaves,
        distances: SemimetricMatrix::new(d)?,
    })
}

/// Adds symmetric noise with upper-triangle entries i.i.d. `N(0, 2σ²)`, then
/// clamps at zero.
pub fn perturb_matrix(d: &SemimetricMatrix, sigma: f64, seed: u64) -> Result<SemimetricMatrix> {
    let noise = Normal::new(0.0, std::f64::consts::SQRT_2 * sigma)
        .map_err(|e| Error::InvalidParameter(format!("bad sigma {sigma}: {e}")))?;
    let n = d.n();
    let mut rng = seeded_rng(seed);
    let mut out = d.as_array().clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let x = (out[[i, j]] + rng.sample(noise)).max(0.0);
            out[[i, j]] = x;
            out[[j, i]] = x;
        }
    }
    SemimetricMatrix::new(out)
}

/// `2 / (N(N-1)) · ‖d1 - d2‖_F` over the full matrix.
pub fn tree_metric_distance(d1: &Array2<f64>, d2: &Array2<f64>) -> Result<f64> {
    if d1.dim() != d2.dim() {
        return Err(Error::DimensionMismatch {
            expected: d1.nrows(),
            found: d2.nrows(),
        });
    }
    let n = d1.nrows() as f64;
    if n < 2.0 {
        return Err(Error::TooFewPoints(d1.nrows()));
    }
    let fro = d1
        .iter()
        .zip(d2.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(2.0 / (n * (n - 1.0)) * fro)
}
