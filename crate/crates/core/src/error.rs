use std::path::PathBuf;

use thiserror::Error;

use crate::solver::SolverTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid constellation: {0}")]
    InvalidConstellation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An operation was called before the state it depends on was prepared.
    #[error("invalid state: {0}")]
    State(String),

    /// Non-finite values appeared during an iterative computation. The trace,
    /// when available, holds the iterations completed before the failure.
    #[error("numerical failure: {message}")]
    NumericalFailure {
        message: String,
        trace: Option<Box<SolverTrace>>,
    },

    #[error("oracle budget exceeded: {needed} points requested, at most {max} allowed")]
    Budget { needed: u128, max: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record data: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        Error::NumericalFailure {
            message: message.into(),
            trace: None,
        }
    }
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Shape(format!(
            "{what}: expected length {expected}, got {got}"
        )));
    }
    Ok(())
}
