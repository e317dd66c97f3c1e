use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    /// An argument outside the domain of an operation (bad node id, wrong
    /// vector dimension, empty input where one is required).
    #[error("domain error: {0}")]
    Domain(String),

    /// The operation needs data that the receiver does not have.
    #[error("state error: {0}")]
    State(String),

    #[error("query budget exhausted ({spent} of {limit} units spent)")]
    BudgetExhausted { spent: u64, limit: u64 },

    #[error("{stage} diverged at {at}: {detail}")]
    Diverged {
        stage: &'static str,
        at: String,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("oracle protocol error: {0}")]
    Protocol(String),

    #[error("{path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
