//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter {0} has no gradient")]
    MissingGrad(String),

    #[error("invalid argument to {op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("dataset record {index}: {msg}")]
    BadRecord { index: usize, msg: String },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("config key {0} is unknown")]
    UnknownConfigKey(String),

    #[error("config key {key}: {msg}")]
    BadConfigValue { key: String, msg: String },

    #[error("corrupt or incompatible file {path}: {msg}")]
    CorruptFile { path: String, msg: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (CLI maps these to a
    /// distinct exit code from runtime failures).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::UnknownConfigKey(_) | Error::BadConfigValue { .. }
        )
    }
}
