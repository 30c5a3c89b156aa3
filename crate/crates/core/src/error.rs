use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command-line layer to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Format,
    Validation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}:{line}: {message}")]
    Format {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    #[error("in-gamut grid has {available} candidates, fewer than the {requested} requested bins")]
    GridTooCoarse { available: usize, requested: usize },

    #[error("no histogram for clicked image {0}")]
    MissingHistogram(String),

    #[error("no colour label for query {0:?}")]
    MissingLabel(String),

    #[error("singular covariance matrix (determinant {0})")]
    SingularCovariance(f64),

    #[error("prediction has non-positive mass {value} at labelled bin {bin}")]
    NonPositivePrediction { bin: usize, value: f64 },

    #[error("query needs at least one clicked and one unclicked image")]
    DegenerateQuery,

    #[error("invalid pixel image: {0}")]
    InvalidImage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(origin: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            origin: origin.into(),
            line,
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Format { .. } => ErrorClass::Format,
            _ => ErrorClass::Validation,
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
