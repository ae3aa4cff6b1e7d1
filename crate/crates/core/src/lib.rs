//! Learned ultrametric trees for fast 1-Wasserstein approximation.
//!
//! Fit a tree whose closed-form transport cost regresses onto exact costs on
//! a training set of distribution pairs, then evaluate new pairs in time
//! linear in the tree size. Exact, Sinkhorn, quadtree and Flowtree
//! baselines are included for comparison.

pub mod error;
pub mod exact;
pub mod io;
pub mod methods;
pub mod metric;
pub mod optimizer;
pub mod quadtree;
pub mod sinkhorn;
pub mod synth;
pub mod tree_ot;
pub mod ultra;

pub use error::{Error, ErrorKind, Result};
pub use exact::{exact_wasserstein, label_pairs, TransportResult};
pub use methods::{run_bench, BenchData, Estimator, Method, MethodRegistry, MethodReport};
pub use metric::{
    euclidean_matrix, mean_relative_error, relative_errors, validate_semimetric, Distribution,
    ErrorSummary, PairSet, PointCloud, SemimetricMatrix, TrainSample,
};
pub use optimizer::{
    train, train_skip_mst, Checkpoint, Gradient, LeafRule, Mode, TrainConfig, TrainOutput,
    TrainState, Update,
};
pub use quadtree::{build_quadtree, flowtree_distance, quadtree_wasserstein, Quadtree};
pub use sinkhorn::{sinkhorn, SinkhornConfig};
pub use tree_ot::{l1_embed, tree_coupling, tree_wasserstein, Coupling, L1Vector};
pub use ultra::{
    diametrical_tree, linfty_shift, project_to_ultrametric, LcaClasses, UltraTree,
    UltrametricMatrix,
};
