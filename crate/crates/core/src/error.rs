use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("transition tensor is not row-stochastic: {0}")]
    NotStochastic(String),

    #[error("value iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("policy evaluation residual {residual:e} exceeds tolerance {tolerance:e}")]
    EvaluationResidual { residual: f64, tolerance: f64 },

    #[error("singular linear system in policy evaluation")]
    Singular,

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("tensor format, line {line}: {message}")]
    Format { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
