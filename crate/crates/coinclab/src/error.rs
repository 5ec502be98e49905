//! Crate-wide error type.

use crate::histfit::FitError;

/// Errors surfaced by simulation, analysis, and file handling.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range, inconsistent, or missing.
    #[error("configuration: {0}")]
    Config(String),
    /// An operation was called with arguments outside its domain.
    #[error("{0}")]
    Domain(String),
    /// A histogram fit failed.
    #[error("fit: {0}")]
    Fit(#[from] FitError),
    /// An input file violates its schema. Reported with the first offending
    /// location so the file can be fixed instead of guessed at.
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the command line front end maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Schema { .. } => 2,
            Error::Fit(_) => 3,
            Error::Io(_) | Error::Json(_) => 4,
        }
    }
}
