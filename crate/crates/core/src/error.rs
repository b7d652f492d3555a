use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Raised when too many input lines are malformed. `line` is the first
    /// offending line (1-based).
    #[error("parse error at line {line}: {message} ({malformed} of {total} lines malformed)")]
    Parse {
        line: usize,
        message: String,
        malformed: usize,
        total: usize,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("training set is empty")]
    EmptyTrainSet,

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("unsupported format version {found} (this build reads {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("every evaluation instance was skipped ({0} out-of-vocabulary)")]
    AllInstancesSkipped(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
