use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Rejected input: a configuration or argument outside the documented domain.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A caller broke a documented precondition (for example an empty availability set).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The requested computation exceeds an enumeration or size guard.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// An internal invariant failed. This indicates a bug, not bad input.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures that indicate a defect rather than a bad request.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Invariant(_) | Error::NoConvergence { .. })
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
