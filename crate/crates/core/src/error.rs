use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum EdenError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("invalid partition: {0}")]
    Partition(String),
    #[error("tree structure error: {0}")]
    Structure(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("not enough samples: {0}")]
    Count(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EdenError {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EdenError::File { path: path.into(), source }
    }

    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            EdenError::Parse { .. } => "parse",
            EdenError::Dimension(_) => "dimension",
            EdenError::Value(_) => "value",
            EdenError::EmptyGraph => "empty_graph",
            EdenError::Partition(_) => "partition",
            EdenError::Structure(_) => "structure",
            EdenError::Parameter(_) => "parameter",
            EdenError::Contract(_) => "contract",
            EdenError::Config(_) => "config",
            EdenError::Divergence(_) => "divergence",
            EdenError::Count(_) => "count",
            EdenError::UndefinedMetric(_) => "undefined_metric",
            EdenError::File { .. } => "file",
            EdenError::Io(_) => "io",
            EdenError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, EdenError>;
