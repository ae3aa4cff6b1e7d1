//! Entropy-regularised transport by Sinkhorn scaling.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::exact::{check_marginals, TransportResult};
use crate::metric::{Distribution, SemimetricMatrix};
use crate::tree_ot::Coupling;

/// Kernel entries below this switch the iteration to log-domain updates.
const UNDERFLOW: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SinkhornConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once the ℓ1 marginal error falls below this.
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            lambda: 1.0,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

/// Alternating marginal scaling on `exp(-d / lambda)`, restricted to the two
/// supports. Returns the unregularised cost `⟨Π, d⟩` of the scaled plan.
pub fn sinkhorn(
    d: &SemimetricMatrix,
    mu: &Distribution,
    rho: &Distribution,
    cfg: &SinkhornConfig,
) -> Result<TransportResult> {
    if !(cfg.lambda > 0.0) || !cfg.lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {}",
            cfg.lambda
        )));
    }
    check_marginals(d, mu, rho)?;
    // rows follow rho, columns follow mu
    let rows: Vec<usize> = (0..d.n()).filter(|&i| rho[i] > 0.0).collect();
    let cols: Vec<usize> = (0..d.n()).filter(|&j| mu[j] > 0.0).collect();
    let r: Vec<f64> = rows.iter().map(|&i| rho[i]).collect();
    let c: Vec<f64> = cols.iter().map(|&j| mu[j]).collect();
    let cost = Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| d.get(rows[a], cols[b]));

    let max_ratio = cost.iter().fold(0.0f64, |m, &x| m.max(x)) / cfg.lambda;
    let underflows = (-max_ratio).exp() < UNDERFLOW;
    let (plan, iterations, err) = if underflows {
        log_domain(&cost, &r, &c, cfg)
    } else {
        scaling(&cost, &r, &c, cfg)
    };
    if !(err < cfg.tol) {
        return Err(Error::NonConvergence {
            iterations,
            marginal_error: err,
        });
    }
    let mut pi = Array2::zeros((d.n(), d.n()));
    let mut total = 0.0;
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in cols.iter().enumerate() {
            pi[[i, j]] = plan[[a, b]];
            total += plan[[a, b]] * cost[[a, b]];
        }
    }
    Ok(TransportResult {
        cost: total,
        coupling: Coupling::new(pi),
        iterations,
    })
}

fn marginal_error(plan: &Array2<f64>, r: &[f64], c: &[f64]) -> f64 {
    let row: f64 = plan
        .rows()
        .into_iter()
        .zip(r)
        .map(|(p, &t)| (p.sum() - t).abs())
        .sum();
    let col: f64 = plan
        .columns()
        .into_iter()
        .zip(c)
        .map(|(p, &t)| (p.sum() - t).abs())
        .sum();
    row + col
}

fn scaling(
    cost: &Array2<f64>,
    r: &[f64],
    c: &[f64],
    cfg: &SinkhornConfig,
) -> (Array2<f64>, usize, f64) {
    let k = cost.mapv(|x| (-x / cfg.lambda).exp());
    let mut u = vec![1.0; r.len()];
    let mut v = vec![1.0; c.len()];
    let mut plan = Array2::zeros(cost.dim());
    let mut err = f64::INFINITY;
    let mut it = 0;
    while it < cfg.max_iter {
        it += 1;
        for (a, ua) in u.iter_mut().enumerate() {
            let kv: f64 = k.row(a).iter().zip(&v).map(|(x, y)| x * y).sum();
            *ua = r[a] / kv;
        }
        for (b, vb) in v.iter_mut().enumerate() {
            let ku: f64 = k.column(b).iter().zip(&u).map(|(x, y)| x * y).sum();
            *vb = c[b] / ku;
        }
        plan = Array2::from_shape_fn(cost.dim(), |(a, b)| u[a] * k[[a, b]] * v[b]);
        err = marginal_error(&plan, r, c);
        if err < cfg.tol {
            break;
        }
    }
    (plan, it, err)
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_domain(
    cost: &Array2<f64>,
    r: &[f64],
    c: &[f64],
    cfg: &SinkhornConfig,
) -> (Array2<f64>, usize, f64) {
    let lam = cfg.lambda;
    let mut f = vec![0.0; r.len()];
    let mut g = vec![0.0; c.len()];
    let mut plan = Array2::zeros(cost.dim());
    let mut err = f64::INFINITY;
    let mut it = 0;
    while it < cfg.max_iter {
        it += 1;
        for a in 0..r.len() {
            let lse = log_sum_exp(cost.row(a).iter().zip(&g).map(|(x, gb)| (gb - x) / lam));
            f[a] = lam * r[a].ln() - lam * lse;
        }
        for b in 0..c.len() {
            let lse = log_sum_exp(cost.column(b).iter().zip(&f).map(|(x, fa)| (fa - x) / lam));
            g[b] = lam * c[b].ln() - lam * lse;
        }
        plan = Array2::from_shape_fn(cost.dim(), |(a, b)| {
            ((f[a] + g[b] - cost[[a, b]]) / lam).exp()
        });
        err = marginal_error(&plan, r, c);
        if err < cfg.tol {
            break;
        }
    }
    (plan, it, err)
}
