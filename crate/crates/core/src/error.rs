use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by corpus ingestion, model training, and scoring.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate key {key:?}")]
    DuplicateKey {
        path: PathBuf,
        line: usize,
        key: String,
    },

    #[error("feature vector for {photo_id:?} has dimension {actual}, expected {expected}")]
    FeatureDimension {
        photo_id: String,
        expected: usize,
        actual: usize,
    },

    #[error("feature vector for {photo_id:?} contains a non-finite value")]
    NonFiniteFeature { photo_id: String },

    #[error("missing feature vectors for photos: {0:?}")]
    MissingFeatures(Vec<String>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(
        path: impl Into<PathBuf>,
        line: usize,
        message: impl Into<String>,
    ) -> Self {
        Error::MalformedLine {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
