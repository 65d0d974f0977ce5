use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate example id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("tag `{0}` has no in-vocabulary token")]
    UncoverableTag(String),

    #[error("caption has no in-vocabulary token; MCS is undefined")]
    UndefinedMcs,

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("no statistics available")]
    NoStatistics,

    #[error("invalid statistics: {0}")]
    InvalidStats(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model contract violated: {0}")]
    ModelContract(String),

    #[error("vocabulary is empty")]
    EmptyVocab,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
