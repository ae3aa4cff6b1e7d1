//! Transport on trees: closed-form distance, greedy optimal coupling and the
//! isometric ℓ1 embedding.
//!
//! All distances here are reported in ultrametric units, i.e. half the
//! path-length distance of the tree, so that the tree cost agrees with
//! `⟨Π, D_u⟩` against [`UltraTree::to_matrix`]. The factor is applied in one
//! place, [`ULTRAMETRIC_UNITS`].

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::metric::Distribution;
use crate::ultra::UltraTree;

/// Ultrametric distance is half the tree path length.
pub const ULTRAMETRIC_UNITS: f64 = 0.5;

/// Rooted topology with point-labelled leaves, enough for mass pushing.
pub(crate) trait Topology {
    fn postorder(&self) -> &[usize];
    fn children(&self, v: usize) -> &[usize];
    fn leaf_point(&self, v: usize) -> Option<usize>;
    fn n_nodes(&self) -> usize;
}

impl Topology for UltraTree {
    fn postorder(&self) -> &[usize] {
        UltraTree::postorder(self)
    }

    fn children(&self, v: usize) -> &[usize] {
        &self.node(v).children
    }

    fn leaf_point(&self, v: usize) -> Option<usize> {
        self.node(v).leaf
    }

    fn n_nodes(&self) -> usize {
        UltraTree::n_nodes(self)
    }
}

/// One block of a greedy coupling: `mass` moved from `mu_point` to
/// `rho_point`, matched at tree node `node` (their LCA).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub rho_point: usize,
    pub mu_point: usize,
    pub mass: f64,
    pub node: usize,
}

/// Child-to-parent greedy matching. Leaf self-mass is matched in place; at an
/// internal node the surplus lists of its children, taken in ascending child
/// id, are matched first come first served.
pub(crate) fn greedy_matching<T: Topology + ?Sized>(t: &T, mu: &[f64], rho: &[f64]) -> Vec<Match> {
    let mut out = Vec::new();
    let mut surplus: Vec<(Vec<(usize, f64)>, Vec<(usize, f64)>)> =
        vec![(Vec::new(), Vec::new()); t.n_nodes()];
    for &v in t.postorder() {
        let (mut mus, mut rhos) = if let Some(p) = t.leaf_point(v) {
            let m = mu[p].min(rho[p]);
            if m > 0.0 {
                out.push(Match {
                    rho_point: p,
                    mu_point: p,
                    mass: m,
                    node: v,
                });
            }
            let mut a = Vec::new();
            let mut b = Vec::new();
            if mu[p] > m {
                a.push((p, mu[p] - m));
            }
            if rho[p] > m {
                b.push((p, rho[p] - m));
            }
            (a, b)
        } else {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for &c in t.children(v) {
                let (ca, cb) = std::mem::take(&mut surplus[c]);
                a.extend(ca);
                b.extend(cb);
            }
            (a, b)
        };
        let (mut i, mut j) = (0, 0);
        while i < mus.len() && j < rhos.len() {
            let m = mus[i].1.min(rhos[j].1);
            out.push(Match {
                rho_point: rhos[j].0,
                mu_point: mus[i].0,
                mass: m,
                node: v,
            });
            mus[i].1 -= m;
            rhos[j].1 -= m;
            if mus[i].1 <= 0.0 {
                i += 1;
            }
            if rhos[j].1 <= 0.0 {
                j += 1;
            }
        }
        mus.drain(..i);
        rhos.drain(..j);
        surplus[v] = (mus, rhos);
    }
    out
}

/// Transport plan with row sums `rho` and column sums `mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pi: Array2<f64>,
}

impl Coupling {
    pub fn new(pi: Array2<f64>) -> Self {
        Coupling { pi }
    }

    pub(crate) fn from_matches(n: usize, matches: &[Match]) -> Self {
        let mut pi = Array2::zeros((n, n));
        for m in matches {
            pi[[m.rho_point, m.mu_point]] += m.mass;
        }
        Coupling { pi }
    }

    pub fn n(&self) -> usize {
        self.pi.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.pi
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pi[[i, j]]
    }

    /// `⟨Π, D⟩`.
    pub fn cost(&self, d: &Array2<f64>) -> f64 {
        self.pi.iter().zip(d.iter()).map(|(p, c)| p * c).sum()
    }

    /// Marginal over rows (should equal `rho`).
    pub fn row_sums(&self) -> Vec<f64> {
        self.pi.rows().into_iter().map(|r| r.sum()).collect()
    }

    /// Marginal over columns (should equal `mu`).
    pub fn col_sums(&self) -> Vec<f64> {
        self.pi.columns().into_iter().map(|c| c.sum()).collect()
    }

    /// `‖Π1 - ρ‖₁ + ‖Πᵀ1 - μ‖₁`.
    pub fn marginal_error(&self, mu: &Distribution, rho: &Distribution) -> f64 {
        let r: f64 = self
            .row_sums()
            .iter()
            .zip(rho.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let c: f64 = self
            .col_sums()
            .iter()
            .zip(mu.as_slice())
            .map(|(a, b)| (a - b).abs())
            .sum();
        r + c
    }
}

fn check_inputs(t: &UltraTree, mu: &Distribution, rho: &Distribution) -> Result<()> {
    mu.expect_len(t.n_points())?;
    rho.expect_len(t.n_points())?;
    t.check_monotone()
}

/// Tree distance together with the number of node visits it took.
#[derive(Clone, Copy, Debug)]
pub struct TreeEvaluation {
    pub distance: f64,
    pub node_visits: usize,
}

pub fn tree_wasserstein_detailed(
    t: &UltraTree,
    mu: &Distribution,
    rho: &Distribution,
) -> Result<TreeEvaluation> {
    check_inputs(t, mu, rho)?;
    let mut diff = vec![0.0; t.n_nodes()];
    let mut total = 0.0;
    let mut visits = 0;
    for &v in t.postorder() {
        visits += 1;
        let node = t.node(v);
        if let Some(p) = node.leaf {
            diff[v] += mu[p] - rho[p];
        }
        if let Some(parent) = node.parent {
            total += (t.height(parent) - node.height) * diff[v].abs();
            diff[parent] += diff[v];
        }
    }
    Ok(TreeEvaluation {
        distance: ULTRAMETRIC_UNITS * total,
        node_visits: visits,
    })
}

/// `½ Σ_v (h(parent(v)) - h(v)) |μ(T_v) - ρ(T_v)|` in one bottom-up pass.
pub fn tree_wasserstein(t: &UltraTree, mu: &Distribution, rho: &Distribution) -> Result<f64> {
    tree_wasserstein_detailed(t, mu, rho).map(|e| e.distance)
}

/// Greedy matches for `(mu, rho)` on the tree.
pub fn tree_matches(t: &UltraTree, mu: &Distribution, rho: &Distribution) -> Result<Vec<Match>> {
    check_inputs(t, mu, rho)?;
    Ok(greedy_matching(t, mu.as_slice(), rho.as_slice()))
}

pub fn tree_coupling(t: &UltraTree, mu: &Distribution, rho: &Distribution) -> Result<Coupling> {
    let matches = tree_matches(t, mu, rho)?;
    Ok(Coupling::from_matches(t.n_points(), &matches))
}

/// Tree-supported measure mapped into ℓ1; one coordinate per non-root node.
#[derive(Clone, Debug, PartialEq)]
pub struct L1Vector(pub Vec<f64>);

impl L1Vector {
    pub fn l1_distance(&self, other: &L1Vector) -> Result<f64> {
        if self.0.len() != other.0.len() {
            return Err(Error::LengthMismatch {
                left: self.0.len(),
                right: other.0.len(),
            });
        }
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Coordinate for non-root node `v` (in node-id order) is
/// `½ (h(parent(v)) - h(v)) μ(T_v)`.
pub fn l1_embed(t: &UltraTree, mu: &Distribution) -> Result<L1Vector> {
    mu.expect_len(t.n_points())?;
    t.check_monotone()?;
    let mut mass = vec![0.0; t.n_nodes()];
    for &v in t.postorder() {
        let node = t.node(v);
        if let Some(p) = node.leaf {
            mass[v] += mu[p];
        }
        if let Some(parent) = node.parent {
            mass[parent] += mass[v];
        }
    }
    Ok(L1Vector(
        t.nodes()
            .iter()
            .enumerate()
            .filter_map(|(v, node)| {
                node.parent
                    .map(|p| ULTRAMETRIC_UNITS * (t.height(p) - node.height) * mass[v])
            })
            .collect(),
    ))
}
