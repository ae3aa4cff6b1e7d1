//! Named transport-distance estimators behind one interface, for
//! benchmarking.
//!
//! A [`Method`] fits on a [`BenchData`] (training set, ground matrix and,
//! for the geometric baselines, the point cloud) and returns an
//! [`Estimator`] that answers distance queries. Fit time and evaluation time
//! are measured separately by [`run_bench`].

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::exact_wasserstein;
use crate::metric::{
    relative_errors, Distribution, ErrorSummary, PairSet, PointCloud, SemimetricMatrix,
};
use crate::optimizer::{train, train_skip_mst, TrainConfig};
use crate::quadtree::{build_quadtree, Quadtree};
use crate::sinkhorn::{sinkhorn, SinkhornConfig};
use crate::tree_ot::tree_wasserstein;
use crate::ultra::UltraTree;

pub struct BenchData {
    /// Ground cost; also the initial matrix for the learned trees.
    pub matrix: SemimetricMatrix,
    pub points: Option<PointCloud>,
    pub train: PairSet,
    pub train_config: TrainConfig,
    pub sinkhorn: SinkhornConfig,
    /// Quadtree shift seed.
    pub seed: u64,
}

pub trait Estimator: Send + Sync {
    fn distance(&self, mu: &Distribution, rho: &Distribution) -> Result<f64>;
}

pub trait Method: Send + Sync {
    fn name(&self) -> &'static str;
    fn fit(&self, data: &BenchData) -> Result<Box<dyn Estimator>>;
}

struct TreeEstimator(UltraTree);

impl Estimator for TreeEstimator {
    fn distance(&self, mu: &Distribution, rho: &Distribution) -> Result<f64> {
        tree_wasserstein(&self.0, mu, rho)
    }
}

pub struct UltTree;

impl Method for UltTree {
    fn name(&self) -> &'static str {
        "ulttree"
    }

    fn fit(&self, data: &BenchData) -> Result<Box<dyn Estimator>> {
        let out = train(&data.matrix, &data.train, &data.train_config)?;
        Ok(Box::new(TreeEstimator(out.tree)))
    }
}

pub struct SkipMst;

impl Method for SkipMst {
    fn name(&self) -> &'static str {
        "skipmst"
    }

    fn fit(&self, data: &BenchData) -> Result<Box<dyn Estimator>> {
        let out = train_skip_mst(&data.matrix, &data.train, &data.train_config)?;
        Ok(Box::new(TreeEstimator(out.tree)))
    }
}

fn points(data: &BenchData, method: &str) -> Result<PointCloud> {
    data.points
        .clone()
        .ok_or_else(|| Error::InvalidParameter(format!("{method} needs a point cloud")))
}

struct QuadtreeEstimator(Quadtree);

impl Estimator for QuadtreeEstimator {
    fn distance(&self, mu: &Distribution, rho: &Distribution) -> Result<f64> {
        self.0.wasserstein(mu, rho)
    }
}

pub struct QuadtreeMethod;

impl Method for QuadtreeMethod {
    fn name(&self) -> &'static str {
        "quadtree"
    }

    fn fit(&self, data: &BenchData) -> Result<Box<dyn Estimator>> {
        let pts = points(data, self.name())?;
        Ok(Box::new(QuadtreeEstimator(build_quadtree(
            &pts, data.seed,
        )?)))
    }
}

struct FlowtreeEstimator(Quadtree, PointCloud);

impl Estimator for FlowtreeEstimator {
    fn distance(&self, mu: &Distribution, rho: &Distribution) -> Result<f64> {
        self.0.flowtree(&self.1, mu, rho)
    }
}

pub struct Flowtree;

impl Method for Flowtree {
    fn name(&self) -> &'static str {
        "flowtree"
    }

    fn fit(&self, data: &BenchData) -> Result<Box<dyn Estimator>> {
        let pts = points(data, self.name())?;
        let qt = build_quadtree(&pts, data.seed)?;
        Ok(Box::new(FlowtreeEstimator(qt, pts)))
    }
}

struct SinkhornEstimator(SemimetricMatrix, SinkhornConfig);

impl Estimator for SinkhornEstimator {
    fn distance(&self, mu: &Distribution, rho: &Distribution) -> Result<f64> {
        Ok(sinkhorn(&self.0, mu, rho, &self.1)?.cost)
    }
}

pub struct Sinkhorn;

impl Method for Sinkhorn {
    fn name(&self) -> &'static str {
        "sinkhorn"
    }

    fn fit(&self, data: &BenchData) -> Result<Box<dyn Estimator>> {
        Ok(Box::new(SinkhornEstimator(
            data.matrix.clone(),
            data.sinkhorn,
        )))
    }
}

struct ExactEstimator(SemimetricMatrix);

impl Estimator for ExactEstimator {
    fn distance(&self, mu: &Distribution, rho: &Distribution) -> Result<f64> {
        Ok(exact_wasserstein(&self.0, mu, rho)?.cost)
    }
}

pub struct Exact;

impl Method for Exact {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn fit(&self, data: &BenchData) -> Result<Box<dyn Estimator>> {
        Ok(Box::new(ExactEstimator(data.matrix.clone())))
    }
}

/// Methods by name, in registration order.
#[derive(Default)]
pub struct MethodRegistry {
    methods: Vec<Box<dyn Method>>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(Box::new(UltTree));
        r.register(Box::new(SkipMst));
        r.register(Box::new(QuadtreeMethod));
        r.register(Box::new(Flowtree));
        r.register(Box::new(Sinkhorn));
        r.register(Box::new(Exact));
        r
    }

    /// Adds a method, replacing any existing one with the same name.
    pub fn register(&mut self, method: Box<dyn Method>) {
        match self.methods.iter().position(|m| m.name() == method.name()) {
            Some(i) => self.methods[i] = method,
            None => self.methods.push(method),
        }
    }

    pub fn get(&self, name: &str) -> Result<&dyn Method> {
        self.methods
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownMethod(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.iter().map(|m| m.name()).collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub fit_seconds: f64,
    /// Wall clock for all test pairs.
    pub eval_seconds: f64,
    pub approx: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub summary: ErrorSummary,
}

/// Fits each named method and evaluates it on every test pair against the
/// pair's recorded exact cost.
pub fn run_bench(
    registry: &MethodRegistry,
    names: &[&str],
    data: &BenchData,
    test: &PairSet,
) -> Result<Vec<MethodReport>> {
    let exact: Vec<f64> = test.samples().iter().map(|s| s.w1).collect();
    names
        .iter()
        .map(|&name| {
            let method = registry.get(name)?;
            let t0 = Instant::now();
            let est = method.fit(data)?;
            let fit_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let approx = (0..test.len())
                .into_par_iter()
                .map(|k| {
                    let (mu, rho, _) = test.pair(k);
                    est.distance(mu, rho)
                })
                .collect::<Result<Vec<_>>>()?;
            let eval_seconds = t1.elapsed().as_secs_f64();
            let rel = relative_errors(&approx, &exact)?;
            Ok(MethodReport {
                method: name.to_string(),
                fit_seconds,
                eval_seconds,
                summary: ErrorSummary::of(&rel),
                relative_errors: rel,
                approx,
            })
        })
        .collect()
}
