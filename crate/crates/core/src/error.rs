use thiserror::Error;

/// Errors raised by the chain, density and control-model operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric positive definite: {0}")]
    NonSpd(String),

    #[error("eigenvalue index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error("no sign change found while bracketing {0}")]
    BracketNotFound(&'static str),

    #[error("eigenvalue gap is zero at index {0}")]
    EigenGapZero(usize),

    #[error("mean coincides with the optimum at step {0}")]
    ZeroDistance(usize),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
