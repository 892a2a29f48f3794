//! Error type shared across the estimation pipeline.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "acceptance stalled in iteration {iteration}, slot {slot}: {proposals} proposals \
         without one below threshold {threshold}"
    )]
    AcceptanceStall {
        iteration: usize,
        slot: usize,
        proposals: u64,
        threshold: f64,
    },

    #[error(
        "particle weight not finite at iteration {iteration}: all transition densities \
         underflowed; inspect the kernel covariance"
    )]
    WeightUnderflow { iteration: usize },

    #[error("covariance matrix not positive definite after regularization")]
    SingularCovariance,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
