use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("value {value} out of range [{min}, {max}] for column '{column}'")]
    Range {
        column: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("node '{0}' has no parents")]
    NoParents(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
