//! Exact 1-Wasserstein distance by min-cost flow.
//!
//! Successive shortest augmenting paths with node potentials on the bipartite
//! graph between the supports of `mu` and `rho`. Points with zero mass never
//! enter the graph. After the last augmentation the potentials form a dual
//! solution, which is checked against the primal plan (complementary
//! slackness) before a result is returned.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metric::{Distribution, PairSet, SemimetricMatrix, TrainSample, MASS_TOL};
use crate::tree_ot::Coupling;

pub const DEFAULT_SIZE_CAP: usize = 2048;
/// Slack allowed in the dual certificate.
pub const CERTIFICATE_TOL: f64 = 1e-7;
/// Residual capacities at or below this are treated as exhausted.
const FLOW_EPS: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct TransportResult {
    pub cost: f64,
    pub coupling: Coupling,
    /// Augmentations for the exact solver, scaling sweeps for Sinkhorn.
    pub iterations: usize,
}

pub(crate) fn check_marginals(
    d: &SemimetricMatrix,
    mu: &Distribution,
    rho: &Distribution,
) -> Result<()> {
    mu.expect_len(d.n())?;
    rho.expect_len(d.n())?;
    let (a, b): (f64, f64) = (mu.as_slice().iter().sum(), rho.as_slice().iter().sum());
    if (a - b).abs() > MASS_TOL {
        return Err(Error::InfeasibleMarginals {
            mu_mass: a,
            rho_mass: b,
        });
    }
    Ok(())
}

pub fn exact_wasserstein(
    d: &SemimetricMatrix,
    mu: &Distribution,
    rho: &Distribution,
) -> Result<TransportResult> {
    exact_wasserstein_capped(d, mu, rho, DEFAULT_SIZE_CAP)
}

pub fn exact_wasserstein_capped(
    d: &SemimetricMatrix,
    mu: &Distribution,
    rho: &Distribution,
    cap: usize,
) -> Result<TransportResult> {
    if d.n() > cap {
        return Err(Error::SizeCap { n: d.n(), cap });
    }
    check_marginals(d, mu, rho)?;
    let src: Vec<usize> = (0..d.n()).filter(|&i| mu[i] > 0.0).collect();
    let dst: Vec<usize> = (0..d.n()).filter(|&j| rho[j] > 0.0).collect();
    let cost: Vec<Vec<f64>> = src
        .iter()
        .map(|&i| dst.iter().map(|&j| d.get(i, j)).collect())
        .collect();
    let supply: Vec<f64> = src.iter().map(|&i| mu[i]).collect();
    let demand: Vec<f64> = dst.iter().map(|&j| rho[j]).collect();

    let mut solver = FlowSolver::new(cost, supply, demand);
    let iterations = solver.run()?;
    solver.certify()?;

    let mut pi = Array2::zeros((d.n(), d.n()));
    let mut total = 0.0;
    for (a, &i) in src.iter().enumerate() {
        for (b, &j) in dst.iter().enumerate() {
            let f = solver.flow[a][b];
            if f > 0.0 {
                pi[[j, i]] = f;
                total += f * solver.cost[a][b];
            }
        }
    }
    Ok(TransportResult {
        cost: total,
        coupling: Coupling::new(pi),
        iterations,
    })
}

/// Labels each `(mu, rho)` pair with its exact transport cost, in parallel.
pub fn label_pairs(
    d: &SemimetricMatrix,
    distributions: Vec<Distribution>,
    pairs: &[(usize, usize)],
) -> Result<PairSet> {
    let samples = pairs
        .par_iter()
        .map(|&(a, b)| {
            let da = distributions.get(a).ok_or(Error::InvalidIndex {
                index: a,
                len: distributions.len(),
            })?;
            let db = distributions.get(b).ok_or(Error::InvalidIndex {
                index: b,
                len: distributions.len(),
            })?;
            Ok(TrainSample {
                mu: a,
                rho: b,
                w1: exact_wasserstein(d, da, db)?.cost,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PairSet::new(distributions, samples)
}

struct FlowSolver {
    cost: Vec<Vec<f64>>,
    supply: Vec<f64>,
    demand: Vec<f64>,
    flow: Vec<Vec<f64>>,
    pot_src: Vec<f64>,
    pot_dst: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Src(usize),
    Dst(usize),
}

impl FlowSolver {
    fn new(cost: Vec<Vec<f64>>, supply: Vec<f64>, demand: Vec<f64>) -> Self {
        let (a, b) = (supply.len(), demand.len());
        FlowSolver {
            cost,
            supply,
            demand,
            flow: vec![vec![0.0; b]; a],
            pot_src: vec![0.0; a],
            pot_dst: vec![0.0; b],
        }
    }

    fn run(&mut self) -> Result<usize> {
        let (a, b) = (self.supply.len(), self.demand.len());
        let limit = 4 * (a + b) * (a + b) + 16;
        let mut iterations = 0;
        while self.supply.iter().any(|&s| s > FLOW_EPS) && self.demand.iter().any(|&s| s > FLOW_EPS)
        {
            if iterations >= limit {
                return Err(Error::NonConvergence {
                    iterations,
                    marginal_error: self.supply.iter().sum(),
                });
            }
            iterations += 1;
            self.augment(a, b);
        }
        Ok(iterations)
    }

    /// One Dijkstra pass on reduced costs from all sources with remaining
    /// supply to the nearest sink with remaining demand, then augment.
    fn augment(&mut self, a: usize, b: usize) {
        let inf = f64::INFINITY;
        let mut dist_src: Vec<f64> = self
            .supply
            .iter()
            .map(|&s| if s > FLOW_EPS { 0.0 } else { inf })
            .collect();
        let mut dist_dst = vec![inf; b];
        let mut prev_src: Vec<Option<usize>> = vec![None; a];
        let mut prev_dst = vec![usize::MAX; b];
        let mut done_src = vec![false; a];
        let mut done_dst = vec![false; b];

        let (target, dt) = loop {
            let mut best = (inf, None);
            for i in 0..a {
                if !done_src[i] && dist_src[i] < best.0 {
                    best = (dist_src[i], Some(Side::Src(i)));
                }
            }
            for j in 0..b {
                if !done_dst[j] && dist_dst[j] < best.0 {
                    best = (dist_dst[j], Some(Side::Dst(j)));
                }
            }
            match best
                .1
                .expect("a sink with remaining demand is always reachable")
            {
                Side::Src(i) => {
                    done_src[i] = true;
                    let base = dist_src[i] + self.pot_src[i];
                    for j in 0..b {
                        if done_dst[j] {
                            continue;
                        }
                        let nd = dist_src[i].max(base + self.cost[i][j] - self.pot_dst[j]);
                        if nd < dist_dst[j] {
                            dist_dst[j] = nd;
                            prev_dst[j] = i;
                        }
                    }
                }
                Side::Dst(j) => {
                    done_dst[j] = true;
                    if self.demand[j] > FLOW_EPS {
                        break (j, dist_dst[j]);
                    }
                    for i in 0..a {
                        if done_src[i] || self.flow[i][j] <= FLOW_EPS {
                            continue;
                        }
                        let nd = dist_dst[j]
                            .max(dist_dst[j] - self.cost[i][j] - self.pot_src[i] + self.pot_dst[j]);
                        if nd < dist_src[i] {
                            dist_src[i] = nd;
                            prev_src[i] = Some(j);
                        }
                    }
                }
            }
        };

        // Walk back to the source, collecting the bottleneck.
        let mut delta = self.demand[target];
        let mut j = target;
        let start = loop {
            let i = prev_dst[j];
            match prev_src[i] {
                Some(jj) => {
                    delta = delta.min(self.flow[i][jj]);
                    j = jj;
                }
                None => {
                    delta = delta.min(self.supply[i]);
                    break i;
                }
            }
        };
        let mut j = target;
        loop {
            let i = prev_dst[j];
            self.flow[i][j] += delta;
            match prev_src[i] {
                Some(jj) => {
                    self.flow[i][jj] -= delta;
                    if self.flow[i][jj] <= FLOW_EPS {
                        self.flow[i][jj] = 0.0;
                    }
                    j = jj;
                }
                None => break,
            }
        }
        self.supply[start] -= delta;
        self.demand[target] -= delta;

        for i in 0..a {
            self.pot_src[i] += dist_src[i].min(dt);
        }
        for j in 0..b {
            self.pot_dst[j] += dist_dst[j].min(dt);
        }
    }

    /// Dual `u_i = -pot_src[i]`, `v_j = pot_dst[j]`: requires
    /// `u_i + v_j ≤ c_ij` everywhere and equality where flow is positive.
    fn certify(&self) -> Result<()> {
        let mut worst: f64 = 0.0;
        for (i, row) in self.cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                let slack = c + self.pot_src[i] - self.pot_dst[j];
                worst = worst.max(-slack);
                if self.flow[i][j] > FLOW_EPS {
                    worst = worst.max(slack.abs());
                }
            }
        }
        if worst > CERTIFICATE_TOL {
            return Err(Error::DualCertificate { violation: worst });
        }
        Ok(())
    }
}
