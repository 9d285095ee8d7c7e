use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    /// A caller broke an operation's precondition (non-scalar backward, single-class ROC input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A score is undefined for the given input, e.g. the RE score of an all-zero image.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what}: bad magic 0x{found:08x} at byte 0 (expected 0x{expected:08x})")]
    BadMagic { what: String, expected: u32, found: u32 },

    #[error("{what}: truncated at byte offset {offset} (needed {needed} more bytes)")]
    Truncated { what: String, offset: usize, needed: usize },

    #[error("{what}: {detail} (byte offset {offset})")]
    Format {
        what: String,
        offset: usize,
        detail: String,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse grouping used by the CLI to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::Format { .. }
            | Error::CountMismatch { .. }
            | Error::Io { .. } => ErrorCategory::Data,
            Error::Shape(_) | Error::Contract(_) | Error::Domain(_) | Error::Checkpoint(_) => ErrorCategory::Runtime,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
