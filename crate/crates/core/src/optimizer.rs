//! Projected gradient descent over ultrametric matrices.
//!
//! Each iteration fixes the current tree, computes the greedy coupling of
//! every training pair on it, and moves the `2n - 1` node heights against
//! the residual-weighted coupling mass matched at each node. The moved
//! heights are turned back into a zero-diagonal matrix and re-projected with
//! single linkage, which is where the topology gets to change.
//!
//! The gradient follows the usual printed form `Σ r_s Π_s` without the factor
//! 2 of the squared loss; that factor is absorbed into the learning rate.
//! Equivalently, it is the exact gradient of `½ Σ r_s²`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{PairSet, SemimetricMatrix};
use crate::synth::seeded_rng;
use crate::tree_ot::{greedy_matching, Match};
use crate::ultra::{project_to_ultrametric, LcaClasses, TreeFile, UltraTree, UltrametricMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Epochs; one epoch is a full pass over the samples.
    pub max_iterations: usize,
    /// `None` for full-batch steps.
    pub batch_size: Option<usize>,
    /// Seeds the per-epoch mini-batch shuffle.
    pub seed: u64,
    /// Relative loss change treated as "no progress".
    pub tolerance: f64,
    /// Consecutive no-progress epochs before stopping.
    pub patience: usize,
    /// Print the loss to stderr every this many epochs; 0 disables.
    pub log_every: usize,
    pub update: Update,
    pub leaf_rule: LeafRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            max_iterations: 200,
            batch_size: None,
            seed: 0,
            tolerance: 1e-8,
            patience: 10,
            log_every: 0,
            update: Update::Entrywise,
            leaf_rule: LeafRule::Repair,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter(
                "need at least one iteration".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter(
                "batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Re-project after every step.
    Full,
    /// Keep the initial topology; project once at the end.
    SkipMst,
}

/// How a gradient step moves the off-diagonal entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Update {
    /// Each entry by its own coupling gradient; the topology is free to
    /// split an LCA class on the next projection.
    Entrywise,
    /// All entries of an LCA class by the class total (node-height descent).
    Tied,
}

/// Gradient credited to leaf heights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafRule {
    /// Derivative through the repair: a leaf height lowers every distance
    /// from its leaf by half, so leaf `i` gets `-½ Σ r (Π_ij + Π_ji)`.
    Repair,
    /// Diagonal coupling mass `Σ r Π_ii`, treating `D_ii` as a free entry.
    /// Followed by the repair this pushes distances the wrong way and tends
    /// to diverge; kept for comparison.
    Diagonal,
}

/// Per-node and per-entry gradients for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    /// Internal nodes: LCA-class totals; leaves: per [`LeafRule`].
    pub nodes: Vec<f64>,
    /// Off-diagonal `Σ r (Π_ij + Π_ji)`; zero diagonal.
    pub entries: Array2<f64>,
}

/// Optimizer state at an iteration boundary.
///
/// In [`Mode::Full`] the matrix is always `tree.to_matrix()`. In
/// [`Mode::SkipMst`] the tree only fixes the topology and the matrix holds
/// the current (generally non-ultrametric) heights-derived distances.
#[derive(Clone, Debug)]
pub struct TrainState {
    mode: Mode,
    iteration: usize,
    tree: UltraTree,
    classes: LcaClasses,
    matrix: Array2<f64>,
    loss_history: Vec<f64>,
    stalled: usize,
    generation: u64,
}

/// Greedy matches of a set of samples against one tree generation.
#[derive(Clone, Debug)]
pub struct CouplingCache {
    generation: u64,
    /// Sample index and its matches, in sample order.
    matches: Vec<(usize, Vec<Match>)>,
}

impl CouplingCache {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

fn check_pairs(n: usize, pairs: &PairSet) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptySamples);
    }
    if pairs.n_points() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: pairs.n_points(),
        });
    }
    Ok(())
}

/// `⟨Π, D⟩` for a coupling given as greedy matches (rows rho, columns mu).
fn predicted(matrix: &Array2<f64>, matches: &[Match]) -> f64 {
    matches
        .iter()
        .map(|m| m.mass * matrix[[m.rho_point, m.mu_point]])
        .sum()
}

impl TrainState {
    /// `D⁽⁰⁾ = proj(d0)` and its tree.
    pub fn new(d0: &SemimetricMatrix, mode: Mode) -> Result<Self> {
        let (tree, u) = project_to_ultrametric(d0)?;
        Ok(Self::from_parts(
            mode,
            tree,
            u.as_array().clone(),
            0,
            Vec::new(),
            0,
        ))
    }

    fn from_parts(
        mode: Mode,
        tree: UltraTree,
        matrix: Array2<f64>,
        iteration: usize,
        loss_history: Vec<f64>,
        stalled: usize,
    ) -> Self {
        let classes = tree.lca_classes();
        TrainState {
            mode,
            iteration,
            tree,
            classes,
            matrix,
            loss_history,
            stalled,
            generation: 0,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn tree(&self) -> &UltraTree {
        &self.tree
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn n_points(&self) -> usize {
        self.tree.n_points()
    }

    /// Greedy couplings of the selected samples on the current tree.
    pub fn couplings(&self, pairs: &PairSet, indices: &[usize]) -> CouplingCache {
        let tree = &self.tree;
        let matches = indices
            .par_iter()
            .map(|&k| {
                let (mu, rho, _) = pairs.pair(k);
                (k, greedy_matching(tree, mu.as_slice(), rho.as_slice()))
            })
            .collect();
        CouplingCache {
            generation: self.generation,
            matches,
        }
    }

    fn check_cache(&self, cache: &CouplingCache) -> Result<()> {
        if cache.generation != self.generation {
            return Err(Error::StaleCouplings);
        }
        Ok(())
    }

    /// Residuals `W_u - W` for the cached samples, in cache order.
    pub fn residuals(&self, pairs: &PairSet, cache: &CouplingCache) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        Ok(cache
            .matches
            .iter()
            .map(|(k, m)| predicted(&self.matrix, m) - pairs.samples()[*k].w1)
            .collect())
    }

    /// `Σ (W - W_u)²` over all samples.
    pub fn loss(&self, pairs: &PairSet) -> Result<f64> {
        check_pairs(self.n_points(), pairs)?;
        let all: Vec<usize> = (0..pairs.len()).collect();
        let cache = self.couplings(pairs, &all);
        Ok(self.residuals(pairs, &cache)?.iter().map(|r| r * r).sum())
    }

    /// Symmetrised matrix gradient `½(G + Gᵀ)`, `G = Σ r_s Π_s`.
    pub fn matrix_gradient(&self, pairs: &PairSet, cache: &CouplingCache) -> Result<Array2<f64>> {
        let r = self.residuals(pairs, cache)?;
        let n = self.n_points();
        let mut g = Array2::zeros((n, n));
        for ((_, matches), r) in cache.matches.iter().zip(&r) {
            for m in matches {
                g[[m.rho_point, m.mu_point]] += 0.5 * r * m.mass;
                g[[m.mu_point, m.rho_point]] += 0.5 * r * m.mass;
            }
        }
        Ok(g)
    }

    /// Gradient of `½ Σ r_s²` with the couplings of `cache` held fixed.
    ///
    /// Internal node `v` collects `Σ_s r_s · (mass matched at v)`, i.e. the
    /// symmetrised matrix gradient summed over both orientations of every
    /// pair in the LCA class of `v`. Leaf entries depend on `leaf_rule`.
    pub fn gradient(
        &self,
        pairs: &PairSet,
        cache: &CouplingCache,
        leaf_rule: LeafRule,
    ) -> Result<Gradient> {
        let r = self.residuals(pairs, cache)?;
        let n = self.n_points();
        let mut nodes = vec![0.0; self.tree.n_nodes()];
        let mut entries = Array2::zeros((n, n));
        for ((_, matches), r) in cache.matches.iter().zip(&r) {
            for m in matches {
                let (i, j) = (m.rho_point, m.mu_point);
                let x = r * m.mass;
                if i == j {
                    if leaf_rule == LeafRule::Diagonal {
                        nodes[self.classes.class_of(i, i)] += x;
                    }
                    continue;
                }
                nodes[self.classes.class_of(i, j)] += x;
                entries[[i, j]] += x;
                entries[[j, i]] += x;
                if leaf_rule == LeafRule::Repair {
                    nodes[self.classes.class_of(i, i)] -= 0.5 * x;
                    nodes[self.classes.class_of(j, j)] -= 0.5 * x;
                }
            }
        }
        Ok(Gradient { nodes, entries })
    }

    /// Gradient step then the leaf-height repair
    /// `D̂ij ← ½(2D̂ij − D̂ii − D̂jj)`; zero diagonal, negatives clamped.
    ///
    /// With [`Update::Tied`] every entry moves by its LCA class's gradient,
    /// with [`Update::Entrywise`] by its own. The diagonal always moves by the
    /// leaf gradients.
    pub fn gd_step(&self, grad: &Gradient, alpha: f64, update: Update) -> Result<Array2<f64>> {
        let n = self.n_points();
        if grad.nodes.len() != self.tree.n_nodes() || grad.entries.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: self.tree.n_nodes(),
                found: grad.nodes.len(),
            });
        }
        let diag: Vec<f64> = (0..n)
            .map(|i| -alpha * grad.nodes[self.classes.class_of(i, i)])
            .collect();
        Ok(Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                return 0.0;
            }
            let g = match update {
                Update::Tied => grad.nodes[self.classes.class_of(i, j)],
                Update::Entrywise => grad.entries[[i, j]],
            };
            (self.matrix[[i, j]] - alpha * g - 0.5 * diag[i] - 0.5 * diag[j]).max(0.0)
        }))
    }

    /// One step on the samples in `indices`. Skip-MST always uses the tied
    /// update: it only learns the heights of its frozen tree.
    pub fn step(&mut self, pairs: &PairSet, indices: &[usize], cfg: &TrainConfig) -> Result<()> {
        let cache = self.couplings(pairs, indices);
        let grad = self.gradient(pairs, &cache, cfg.leaf_rule)?;
        match self.mode {
            Mode::Full => {
                let next = self.gd_step(&grad, cfg.learning_rate, cfg.update)?;
                let (tree, u) =
                    project_to_ultrametric(&SemimetricMatrix::from_array_unchecked(next))?;
                self.classes = tree.lca_classes();
                self.tree = tree;
                self.matrix = u.into_semimetric().into_array();
            }
            Mode::SkipMst => {
                self.matrix = self.gd_step(&grad, cfg.learning_rate, Update::Tied)?;
            }
        }
        self.generation += 1;
        Ok(())
    }

    /// Final ultrametric: the state itself in full mode, one projection of
    /// the trained matrix in skip-MST mode.
    pub fn finish(&self) -> Result<(UltraTree, UltrametricMatrix)> {
        match self.mode {
            Mode::Full => Ok((
                self.tree.clone(),
                UltrametricMatrix::from_array_unchecked(self.matrix.clone()),
            )),
            Mode::SkipMst => {
                project_to_ultrametric(&SemimetricMatrix::from_array_unchecked(self.matrix.clone()))
            }
        }
    }

    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            mode: self.mode,
            iteration: self.iteration,
            tree: self.tree.to_file(),
            matrix: self.matrix.rows().into_iter().map(|r| r.to_vec()).collect(),
            config: config.clone(),
            loss_history: self.loss_history.clone(),
            stalled: self.stalled,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let tree = UltraTree::from_file(&c.tree)?;
        let n = tree.n_points();
        if c.matrix.len() != n || c.matrix.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: c.matrix.len(),
            });
        }
        let matrix = Array2::from_shape_fn((n, n), |(i, j)| c.matrix[i][j]);
        SemimetricMatrix::new(matrix.clone())?;
        Ok(Self::from_parts(
            c.mode,
            tree,
            matrix,
            c.iteration,
            c.loss_history.clone(),
            c.stalled,
        ))
    }
}

/// Resumable training snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub mode: Mode,
    pub iteration: usize,
    pub tree: TreeFile,
    pub matrix: Vec<Vec<f64>>,
    pub config: TrainConfig,
    pub loss_history: Vec<f64>,
    pub stalled: usize,
}

impl Checkpoint {
    pub fn write<W: std::io::Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read<R: std::io::Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub tree: UltraTree,
    pub matrix: UltrametricMatrix,
    /// Loss of `D⁽ᵏ⁾` for every epoch boundary reached, including the last.
    pub loss_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs epochs until `cfg.max_iterations` total, zero loss, or `patience`
/// consecutive epochs of relative loss change below `tolerance`.
pub fn run(state: &mut TrainState, pairs: &PairSet, cfg: &TrainConfig) -> Result<bool> {
    cfg.validate()?;
    check_pairs(state.n_points(), pairs)?;
    let m = pairs.len();
    let mut order: Vec<usize> = (0..m).collect();
    let batch = cfg.batch_size.unwrap_or(m).min(m);
    let mut rng = seeded_rng(cfg.seed);
    // replay the shuffles of completed epochs so resumed runs match
    if cfg.batch_size.is_some() {
        for _ in 0..state.iteration {
            order.shuffle(&mut rng);
        }
    }
    loop {
        // a resumed state already holds the loss of its boundary
        if state.loss_history.len() <= state.iteration {
            let loss = state.loss(pairs)?;
            if cfg.log_every > 0 && state.iteration % cfg.log_every == 0 {
                eprintln!("epoch {:>5}  loss {:.6e}", state.iteration, loss);
            }
            if let Some(&prev) = state.loss_history.last() {
                let rel = (loss - prev).abs() / prev.max(1e-12);
                state.stalled = if rel < cfg.tolerance {
                    state.stalled + 1
                } else {
                    0
                };
            }
            state.loss_history.push(loss);
        }
        let loss = state.loss_history[state.iteration];
        if loss == 0.0 || state.stalled >= cfg.patience {
            return Ok(true);
        }
        if state.iteration >= cfg.max_iterations {
            return Ok(false);
        }
        if cfg.batch_size.is_some() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            state.step(pairs, chunk, cfg)?;
        }
        state.iteration += 1;
    }
}

fn train_mode(
    d0: &SemimetricMatrix,
    pairs: &PairSet,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<TrainOutput> {
    let mut state = TrainState::new(d0, mode)?;
    let converged = run(&mut state, pairs, cfg)?;
    output(&state, converged)
}

pub fn output(state: &TrainState, converged: bool) -> Result<TrainOutput> {
    let (tree, matrix) = state.finish()?;
    Ok(TrainOutput {
        tree,
        matrix,
        loss_history: state.loss_history.clone(),
        iterations: state.iteration,
        converged,
    })
}

/// Projected gradient descent from `proj(d0)`.
pub fn train(d0: &SemimetricMatrix, pairs: &PairSet, cfg: &TrainConfig) -> Result<TrainOutput> {
    train_mode(d0, pairs, cfg, Mode::Full)
}

/// Same descent with the initial topology frozen and a single projection at
/// the end.
pub fn train_skip_mst(
    d0: &SemimetricMatrix,
    pairs: &PairSet,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_mode(d0, pairs, cfg, Mode::SkipMst)
}
