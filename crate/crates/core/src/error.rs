use thiserror::Error;

/// Errors produced anywhere in the scrubbing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no usable locations")]
    NoUsableLocations,

    #[error("degenerate variance: {0}")]
    Degenerate(String),

    #[error("design saturates timepoints ({columns} columns for {rows} volumes)")]
    DesignSaturated { rows: usize, columns: usize },

    #[error(
        "FastICA did not converge after {restarts} restarts \
         (best max change {best_change:.3e} after {iterations} iterations)"
    )]
    IcaNotConverged {
        restarts: usize,
        iterations: usize,
        best_change: f64,
    },

    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for failures caused by bad inputs rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::Shape(_)
                | Error::Parse(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::DesignSaturated { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
