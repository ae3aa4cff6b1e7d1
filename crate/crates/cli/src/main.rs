//! `ultraot`: generate data, fit ultrametric trees and benchmark transport
//! distance estimators from the command line.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 invalid input or usage,
//! 3 numerical failure, 4 I/O failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ultraot::io::{
    read_distributions, read_matrix, read_points, read_samples, write_distributions, write_matrix,
    write_points, write_samples,
};
use ultraot::optimizer::{output, run};
use ultraot::synth::{
    disjoint_pairs, gen_distributions, gen_gaussian_points, gen_random_tree, gen_uniform_points,
    perturb_matrix,
};
use ultraot::ultra::TreeFile;
use ultraot::{
    euclidean_matrix, label_pairs, project_to_ultrametric, relative_errors, run_bench,
    tree_wasserstein, BenchData, Checkpoint, ErrorKind, ErrorSummary, LeafRule, MethodRegistry,
    Mode, PairSet, PointCloud, SemimetricMatrix, SinkhornConfig, TrainConfig, TrainState,
    UltraTree, Update,
};

#[derive(Parser)]
#[command(
    name = "ultraot",
    version,
    about = "Learned ultrametric trees for fast Wasserstein distances"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Gen(Gen),
    /// Project a distance matrix onto its subdominant ultrametric.
    Project(ProjectArgs),
    /// Learn an ultrametric tree from labelled distribution pairs.
    Train(TrainArgs),
    /// Evaluate a tree's transport distance on labelled pairs.
    Eval(EvalArgs),
    /// Fit and compare estimators on a train/test split.
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum Gen {
    /// Uniform points in a hypercube, as point CSV.
    Points {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
        hi: f64,
        /// Standard Gaussian points instead of a hypercube.
        #[arg(long)]
        gaussian: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Euclidean distance matrix of a point CSV.
    Matrix {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leaf distances of a random unit-weight tree, optionally perturbed.
    Tree {
        #[arg(long)]
        nodes: usize,
        /// Noise scale; entries get N(0, 2σ²) noise.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noisy matrix (the exact one when σ = 0).
        #[arg(long)]
        out: PathBuf,
        /// Also write the noise-free matrix here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Random distributions over `n` points, one per row.
    Distributions {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        count: usize,
        /// Fraction of points in each support, in (0, 1].
        #[arg(long, default_value_t = 1.0)]
        sparsity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label disjoint pairs (0,1), (2,3), … with exact W1 under a matrix.
    Samples {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        distributions: PathBuf,
        /// Number of pairs (default: all remaining complete pairs).
        #[arg(long)]
        pairs: Option<usize>,
        /// Skip this many leading pairs, e.g. to label a disjoint test set.
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ProjectArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Tree JSON.
    #[arg(long)]
    out: PathBuf,
    /// Also write the ultrametric as matrix CSV.
    #[arg(long)]
    matrix_out: Option<PathBuf>,
    /// Also write the tree in Newick format.
    #[arg(long)]
    newick: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpdateArg {
    Entrywise,
    Tied,
}

#[derive(Clone, Copy, ValueEnum)]
enum LeafRuleArg {
    Repair,
    Diagonal,
}

/// Labelled pairs: a distribution CSV plus a samples JSONL indexing into it.
#[derive(Args)]
struct PairArgs {
    #[arg(long)]
    distributions: PathBuf,
    #[arg(long)]
    samples: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Initial distance matrix.
    #[arg(long)]
    matrix: PathBuf,
    #[command(flatten)]
    pairs: PairArgs,
    /// Learned tree JSON; the loss history goes to `<out>.history.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainOpts,
    /// Write a resumable checkpoint here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Checkpoint every this many epochs (0: only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Continue from a checkpoint; its config replaces the training flags
    /// except `--iters`.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Epochs.
    #[arg(long, default_value_t = 200)]
    iters: usize,
    /// Mini-batch size (default: full batch).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, value_enum, default_value_t = UpdateArg::Entrywise)]
    update: UpdateArg,
    #[arg(long, value_enum, default_value_t = LeafRuleArg::Repair)]
    leaf_rule: LeafRuleArg,
    /// Keep the initial topology during training.
    #[arg(long)]
    skip_mst: bool,
    /// Print the loss every this many epochs.
    #[arg(long, default_value_t = 0)]
    log_every: usize,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.alpha,
            max_iterations: self.iters,
            batch_size: self.batch,
            seed: self.seed,
            tolerance: self.tolerance,
            patience: self.patience,
            log_every: self.log_every,
            update: match self.update {
                UpdateArg::Entrywise => Update::Entrywise,
                UpdateArg::Tied => Update::Tied,
            },
            leaf_rule: match self.leaf_rule {
                LeafRuleArg::Repair => LeafRule::Repair,
                LeafRuleArg::Diagonal => LeafRule::Diagonal,
            },
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    tree: PathBuf,
    #[command(flatten)]
    pairs: PairArgs,
    /// Per-pair CSV; a summary goes to `<out>.json`. Stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Ground cost matrix; computed from `--points` if omitted.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Point cloud, needed by the quadtree methods.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long)]
    distributions: PathBuf,
    #[arg(long)]
    train_samples: PathBuf,
    #[arg(long)]
    test_samples: PathBuf,
    /// Comma-separated method names.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "ulttree,quadtree,flowtree,sinkhorn,exact"
    )]
    methods: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[command(flatten)]
    train: TrainOpts,
    /// Summary CSV; full per-pair reports go to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("cannot open {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn load_matrix(path: &Path) -> Result<SemimetricMatrix> {
    read_matrix(open(path)?).with_context(|| format!("reading matrix {}", path.display()))
}

fn load_points(path: &Path) -> Result<PointCloud> {
    read_points(open(path)?).with_context(|| format!("reading points {}", path.display()))
}

fn load_pairs(args: &PairArgs, n: Option<usize>) -> Result<PairSet> {
    let dists = read_distributions(open(&args.distributions)?, n)
        .with_context(|| format!("reading distributions {}", args.distributions.display()))?;
    let samples = read_samples(open(&args.samples)?)
        .with_context(|| format!("reading samples {}", args.samples.display()))?;
    Ok(PairSet::new(dists, samples)?)
}

fn load_tree(path: &Path) -> Result<UltraTree> {
    let file: TreeFile = serde_json::from_reader(open(path)?)
        .with_context(|| format!("reading tree {}", path.display()))?;
    Ok(UltraTree::from_file(&file)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// `tree.json` -> `tree.json.history.json` style sidecar path.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn gen(cmd: Gen) -> Result<()> {
    match cmd {
        Gen::Points {
            n,
            dim,
            lo,
            hi,
            gaussian,
            seed,
            out,
        } => {
            let pts = if gaussian {
                gen_gaussian_points(n, dim, seed)?
            } else {
                gen_uniform_points(n, dim, lo, hi, seed)?
            };
            write_points(create(&out)?, &pts)?;
        }
        Gen::Matrix { points, out } => {
            let pts = load_points(&points)?;
            write_matrix(create(&out)?, euclidean_matrix(&pts).as_array())?;
        }
        Gen::Tree {
            nodes,
            sigma,
            seed,
            out,
            truth,
        } => {
            let t = gen_random_tree(nodes, seed)?;
            let noisy = perturb_matrix(&t.distances, sigma, seed.wrapping_add(1))?;
            write_matrix(create(&out)?, noisy.as_array())?;
            if let Some(path) = truth {
                write_matrix(create(&path)?, t.distances.as_array())?;
            }
        }
        Gen::Distributions {
            n,
            count,
            sparsity,
            seed,
            out,
        } => {
            write_distributions(create(&out)?, &gen_distributions(n, count, sparsity, seed)?)?;
        }
        Gen::Samples {
            matrix,
            distributions,
            pairs,
            skip,
            out,
        } => {
            let d = load_matrix(&matrix)?;
            let dists = read_distributions(open(&distributions)?, Some(d.n()))
                .with_context(|| format!("reading distributions {}", distributions.display()))?;
            let available = (dists.len() / 2).saturating_sub(skip);
            let k = pairs.unwrap_or(available);
            if k > available {
                bail!(ultraot::Error::InvalidParameter(format!(
                    "{k} pairs after skipping {skip} need {} distributions, found {}",
                    2 * (skip + k),
                    dists.len()
                )));
            }
            let index: Vec<(usize, usize)> = disjoint_pairs(skip + k).split_off(skip);
            let labelled = label_pairs(&d, dists, &index)?;
            write_samples(create(&out)?, labelled.samples())?;
        }
    }
    Ok(())
}

fn project(args: ProjectArgs) -> Result<()> {
    let d = load_matrix(&args.matrix)?;
    let (tree, u) = project_to_ultrametric(&d)?;
    write_json(&args.out, &tree.to_file())?;
    if let Some(path) = args.matrix_out {
        write_matrix(create(&path)?, u.as_array())?;
    }
    if let Some(path) = args.newick {
        let mut w = create(&path)?;
        writeln!(w, "{}", tree.to_newick())?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    iterations: usize,
    converged: bool,
    final_loss: Option<f64>,
    loss_history: &'a [f64],
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let d0 = load_matrix(&args.matrix)?;
    let pairs = load_pairs(&args.pairs, Some(d0.n()))?;
    let (mut state, mut cfg) = match &args.resume {
        Some(path) => {
            let c = Checkpoint::read(open(path)?)
                .with_context(|| format!("reading checkpoint {}", path.display()))?;
            let mut cfg = c.config.clone();
            cfg.max_iterations = args.train.iters;
            (TrainState::from_checkpoint(&c)?, cfg)
        }
        None => {
            let mode = if args.train.skip_mst {
                Mode::SkipMst
            } else {
                Mode::Full
            };
            (TrainState::new(&d0, mode)?, args.train.config())
        }
    };
    let target = cfg.max_iterations;
    let converged = loop {
        let stop = if args.checkpoint.is_some() && args.checkpoint_every > 0 {
            (state.iteration() + args.checkpoint_every).min(target)
        } else {
            target
        };
        cfg.max_iterations = stop;
        let done = run(&mut state, &pairs, &cfg)?;
        if let Some(path) = &args.checkpoint {
            cfg.max_iterations = target;
            state.checkpoint(&cfg).write(create(path)?)?;
        }
        if done || stop >= target {
            break done;
        }
    };
    let out = output(&state, converged)?;
    write_json(&args.out, &out.tree.to_file())?;
    let report = TrainReport {
        iterations: out.iterations,
        converged: out.converged,
        final_loss: out.loss_history.last().copied(),
        loss_history: &out.loss_history,
    };
    write_json(&sidecar(&args.out, ".history.json"), &report)?;
    eprintln!(
        "trained {} epochs, loss {:.6e}{}",
        out.iterations,
        report.final_loss.unwrap_or(f64::NAN),
        if out.converged { " (converged)" } else { "" }
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary {
    pairs: usize,
    relative_error: ErrorSummary,
}

fn eval(args: EvalArgs) -> Result<()> {
    let tree = load_tree(&args.tree)?;
    let pairs = load_pairs(&args.pairs, Some(tree.n_points()))?;
    let approx = (0..pairs.len())
        .map(|k| {
            let (mu, rho, _) = pairs.pair(k);
            tree_wasserstein(&tree, mu, rho)
        })
        .collect::<ultraot::Result<Vec<f64>>>()?;
    let exact: Vec<f64> = pairs.samples().iter().map(|s| s.w1).collect();
    let rel = relative_errors(&approx, &exact)?;

    let mut w: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(w, "mu,rho,tree,exact,relative_error")?;
    for (k, s) in pairs.samples().iter().enumerate() {
        writeln!(w, "{},{},{},{},{}", s.mu, s.rho, approx[k], s.w1, rel[k])?;
    }
    w.flush()?;
    let summary = EvalSummary {
        pairs: pairs.len(),
        relative_error: ErrorSummary::of(&rel),
    };
    match &args.out {
        Some(path) => write_json(&sidecar(path, ".json"), &summary)?,
        None => eprintln!(
            "mean relative error {:.6} (std {:.6})",
            summary.relative_error.mean, summary.relative_error.std
        ),
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let points = args.points.as_deref().map(load_points).transpose()?;
    let matrix = match (&args.matrix, &points) {
        (Some(path), _) => load_matrix(path)?,
        (None, Some(pts)) => euclidean_matrix(pts),
        (None, None) => bail!(ultraot::Error::InvalidParameter(
            "bench needs --matrix or --points".into()
        )),
    };
    let n = matrix.n();
    let dists = read_distributions(open(&args.distributions)?, Some(n))
        .with_context(|| format!("reading distributions {}", args.distributions.display()))?;
    let train = PairSet::new(dists.clone(), read_samples(open(&args.train_samples)?)?)?;
    let test = PairSet::new(dists, read_samples(open(&args.test_samples)?)?)?;
    let data = BenchData {
        matrix,
        points,
        train,
        train_config: args.train.config(),
        sinkhorn: SinkhornConfig {
            lambda: args.lambda,
            ..SinkhornConfig::default()
        },
        seed: args.train.seed,
    };
    let registry = MethodRegistry::with_defaults();
    let names: Vec<&str> = args.methods.iter().map(String::as_str).collect();
    let reports = run_bench(&registry, &names, &data, &test)?;

    let mut w = create(&args.out)?;
    writeln!(
        w,
        "method,mean_relative_error,std_relative_error,fit_seconds,eval_seconds"
    )?;
    for r in &reports {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.method, r.summary.mean, r.summary.std, r.fit_seconds, r.eval_seconds
        )?;
    }
    w.flush()?;
    write_json(&sidecar(&args.out, ".json"), &reports)?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ultraot::Error>() {
            return match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 4,
            };
        }
        if cause.is::<io::Error>() {
            return 4;
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn dispatch(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Gen(g) => gen(g),
        Command::Project(a) => project(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
