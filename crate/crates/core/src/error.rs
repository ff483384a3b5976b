use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure kinds surfaced by the library.
///
/// The variants are grouped so that callers (notably the CLI) can map them
/// onto exit codes with [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("unknown sample id {0}")]
    UnknownId(usize),

    #[error("within-cluster dispersion is zero; separation is infinite")]
    InfiniteSeparation,
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// I/O failure, malformed file, invalid configuration.
    Input,
    /// Data that cannot be trained or evaluated on.
    Degenerate,
    /// Incompatible tensor or file shapes.
    Shape,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::Format(_)
            | Error::Row { .. }
            | Error::NonFinite(_)
            | Error::InvalidConfig(_)
            | Error::UnknownId(_) => ErrorKind::Input,
            Error::DegenerateBatch(_) | Error::DegenerateData(_) | Error::InfiniteSeparation => {
                ErrorKind::Degenerate
            }
            Error::DimensionMismatch { .. } => ErrorKind::Shape,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn row(row: usize, message: impl Into<String>) -> Self {
        Error::Row {
            row,
            message: message.into(),
        }
    }

    pub(crate) fn dims(expected: usize, actual: usize, context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected,
            actual,
            context: context.into(),
        }
    }
}
