//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// An argument violates a precondition.
    #[error("{0}")]
    Domain(String),

    /// An operation was called in a state that does not permit it.
    #[error("{0}")]
    State(String),

    /// Matrix dimensions are incompatible.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input exceeds a hard size limit of an exhaustive algorithm.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Bad experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A statistic is undefined for the given input.
    #[error("undefined metric: {0}")]
    Metric(String),

    /// A checkpoint file is corrupt or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Whether this error indicates a bug or resource failure inside the
    /// program rather than bad user input.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            Error::State(_) | Error::Shape(_) | Error::Capacity(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
