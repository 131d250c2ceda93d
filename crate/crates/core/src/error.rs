use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the library.
///
/// The variants map onto three coarse classes used by the CLI for exit
/// codes: usage errors (bad arguments or incompatible inputs), data errors
/// (malformed files, non-finite values) and runtime failures (IO, numerics).
#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("csv parse error on line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("validation error in row {row}: {message}")]
    Validation { row: usize, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's arguments rather than the data
    /// or the computation.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::DimensionMismatch(..))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
