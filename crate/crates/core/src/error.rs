use std::path::PathBuf;

use thiserror::Error;

/// Errors produced while loading, validating, or solving robust MDPs.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    /// A model or policy violates a structural invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("infeasible uncertainty set at state {state}")]
    InfeasibleUncertainty { state: usize },

    /// A linear solve or LP failed in a way valid inputs should never trigger.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("robust value iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("policy space {size} exceeds cap {cap}")]
    PolicySpaceTooLarge { size: u128, cap: u128 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
