//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric: entry ({row}, {col}) differs from its transpose")]
    NotSymmetric { row: usize, col: usize },

    #[error("cholesky decomposition failed: non-positive pivot at index {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue} below tolerance {tolerance}")]
    NotPsd { eigenvalue: f64, tolerance: f64 },

    #[error("symmetric eigensolver did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("numerical integrity violated: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("arm {arm} exhausted: {remaining} rows left, {requested} requested")]
    Exhausted {
        arm: usize,
        remaining: usize,
        requested: usize,
    },

    #[error("embedding file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
