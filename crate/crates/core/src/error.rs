//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("validation: {0}")]
    Validation(String),

    /// A configuration file or field is unusable.
    #[error("config: {0}")]
    Config(String),

    /// A dataset cannot be trained on (e.g. a single-class conversion set).
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    /// A metric is undefined for the given inputs.
    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    /// A tensor or volume had an unexpected shape.
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    /// No permutation head is configured for this sequence length.
    #[error("no permutation head configured for n={0}")]
    MissingHead(usize),

    /// Checkpoint file is missing, truncated or inconsistent with its sidecar.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
