use std::path::PathBuf;

use thiserror::Error;

use crate::numeric::NumericError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("numerical divergence at step {step}: {message}")]
    Divergence { step: usize, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse { path: path.into(), message: message.to_string() }
    }

    /// Process exit code: 1 validation/input, 2 invariant, 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(NumericError::NonFinite { .. }) | Error::Divergence { .. } => 3,
            Error::Invariant(_) => 2,
            _ => 1,
        }
    }
}
