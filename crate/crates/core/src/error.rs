use thiserror::Error;

/// Failures raised by the numerical layers and the run driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("undefined at x = {x}: {reason}")]
    Domain { x: f64, reason: String },

    #[error("non-finite integrand at x = {x}")]
    NonFinite { x: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("grid does not contain the construction: {0}")]
    GridTooSmall(String),

    #[error("grid under-resolves the kernels: {0}")]
    UnderResolved(String),

    #[error("mass mismatch: {0}")]
    MassMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
