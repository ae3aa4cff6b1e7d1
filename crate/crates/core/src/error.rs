use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows} rows but a row with {cols} columns")]
    NonSquare { rows: usize, cols: usize },

    #[error("non-finite value at ({i}, {j})")]
    NonFinite { i: usize, j: usize },

    #[error("negative entry {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },

    #[error("nonzero diagonal entry {value} at index {i}")]
    NonzeroDiagonal { i: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("exact value at index {index} must be positive, found {value}")]
    ZeroExact { index: usize, value: f64 },

    #[error("distribution has negative or non-finite mass {value} at index {index}")]
    NegativeMass { index: usize, value: f64 },

    #[error("distribution mass sums to {sum}, expected 1")]
    MassMismatch { sum: f64 },

    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("index {index} out of range for {len} items")]
    InvalidIndex { index: usize, len: usize },

    #[error("strong triangle inequality fails on ({i}, {j}, {k})")]
    NotUltrametric { i: usize, j: usize, k: usize },

    #[error("node {node} is higher than its parent")]
    NonMonotone { node: usize },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("all points coincide; spread is undefined")]
    CoincidentPoints,

    #[error("marginal masses differ: {mu_mass} vs {rho_mass}")]
    InfeasibleMarginals { mu_mass: f64, rho_mass: f64 },

    #[error("problem size {n} exceeds the solver cap {cap}")]
    SizeCap { n: usize, cap: usize },

    #[error("dual certificate violated by {violation}")]
    DualCertificate { violation: f64 },

    #[error("no convergence after {iterations} iterations (marginal error {marginal_error})")]
    NonConvergence {
        iterations: usize,
        marginal_error: f64,
    },

    #[error("couplings were computed for a different tree")]
    StaleCouplings,

    #[error("empty sample set")]
    EmptySamples,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) => ErrorKind::Io,
            Error::DualCertificate { .. } | Error::NonConvergence { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}
