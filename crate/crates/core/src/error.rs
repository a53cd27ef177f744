//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by estimation, coding and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An iterative routine produced NaN/Inf or blew up.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A randomized construction did not succeed within its retry budget.
    #[error("construction failed: {0}")]
    Construction(String),
    /// Configuration file or CLI override is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
