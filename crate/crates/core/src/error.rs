use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed NIfTI header; `offset` is the byte position of the offending field.
    #[error("malformed header at byte {offset}: {message}")]
    Header { offset: u64, message: String },

    #[error("unsupported datatype code {code} (header byte 70)")]
    UnsupportedDatatype { code: i16 },

    #[error("truncated data section: expected {expected} bytes starting at byte {offset}, found {found}")]
    Truncated {
        offset: u64,
        expected: u64,
        found: u64,
    },

    #[error("non-integer value {value} in label file at voxel {index} (byte {offset})")]
    NonIntegerLabel { index: usize, offset: u64, value: f64 },

    #[error("unregistered label {value} at voxel {index}")]
    UnregisteredLabel { index: usize, value: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("affine is not invertible")]
    NonInvertibleAffine,

    #[error("unknown structure {key:?}{}", suggestion_suffix(.suggestions))]
    UnknownStructure {
        key: String,
        suggestions: Vec<String>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A statistic is undefined for the given data (e.g. zero rank variance).
    #[error("undefined statistic: {0}")]
    Undefined(String),

    /// Internal consistency check failed; indicates a bug rather than bad input.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

fn suggestion_suffix(s: &[String]) -> String {
    if s.is_empty() {
        String::new()
    } else {
        format!("; did you mean {}?", s.join(", "))
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(offset: u64, message: impl Into<String>) -> Self {
        Error::Header {
            offset,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}
