//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by estimator construction and evaluation.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension must be at least 1, got {0}")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("insufficient neighbors: k = {k} exceeds reference size {m}")]
    InsufficientNeighbors { k: usize, m: usize },

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("nonfinite coordinate at point {index}")]
    NonFiniteCoordinate { index: usize },

    #[error("functional domain error: likelihood ratio must be positive, got {0}")]
    NonPositiveRatio(f64),

    #[error("functional parameter error: alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error: nonfinite ratio at evaluation point {index}")]
    NonFiniteRatio { index: usize },

    #[error("degenerate basis: constraint matrix is rank deficient")]
    DegenerateBasis,

    #[error("infeasible norm budget: eta = {eta} is below the feasibility floor 1/L = {floor}")]
    InfeasibleBudget { eta: f64, floor: f64 },

    #[error("{failed} of {total} resampling replicates failed (threshold {threshold})")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        threshold: usize,
    },

    #[error("degenerate trials: zero variance across {0} estimates")]
    DegenerateTrials(usize),

    #[error("pathological sampling spec: acceptance rate {rate:.2e} below {floor:.0e}")]
    PathologicalSpec { rate: f64, floor: f64 },

    #[error("model error: covariance for class {class} is singular after regularization")]
    SingularCovariance { class: String },

    #[error("unknown class label: {0}")]
    UnknownLabel(String),
}

pub type Result<T> = std::result::Result<T, Error>;
