//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/layer dimension disagreement; the message carries the full
    /// dimension report.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An argument violated an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A cohort profile that cannot be realized (e.g. tumor volume exceeding
    /// the body, or a tumor-count distribution that permits zero tumors).
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    /// A non-finite value where the pipeline must fail fast (gradients, losses).
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Config file could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// A pipeline stage failed; carries the stage name for diagnostics.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    /// File format violation (volume files, checkpoints, manifests, reports).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
