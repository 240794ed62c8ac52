use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid quota matrix: {0}")]
    InvalidQuota(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{0}: no records")]
    NoRecords(PathBuf),

    #[error("invalid epidemic state: {0}")]
    State(String),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(&'static str),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
