use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("batch-norm layer {layer} has no running statistics; run a train-mode pass first")]
    UninitializedStats { layer: usize },

    #[error("task {task} cannot form any valid triplet: {reason}")]
    TaskDegenerate { task: String, reason: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error(transparent)]
    Parse(#[from] crate::data::ucr::ParseError),

    #[error("split manifest: {0}")]
    Manifest(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record at line {line}: {message}")]
    Record { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Short stable name of the variant, for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::UninitializedStats { .. } => "uninitialized-stats",
            Error::TaskDegenerate { .. } => "task-degenerate",
            Error::Sampling(_) => "sampling",
            Error::Parse(_) => "parse",
            Error::Manifest(_) => "manifest",
            Error::Checkpoint(_) => "checkpoint",
            Error::Stats(_) => "stats",
            Error::Io { .. } => "io",
            Error::Record { .. } => "record",
        }
    }
}
