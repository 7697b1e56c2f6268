//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("factorization failure: {0}")]
    Factorization(String),

    #[error("iterative solver did not converge: {0}")]
    NoConvergence(String),

    #[error("CFL violation: dt = {dt:.3e} exceeds the stable bound; use dt <= {dt_max:.3e} ({steps} steps per period)")]
    CflViolation { dt: f64, dt_max: f64, steps: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("zero denominator in relative misfit: no volume or impedance sources; use the absolute misfit instead")]
    ZeroMisfitDenominator,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
