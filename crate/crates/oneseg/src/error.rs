use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
///
/// Variants are grouped by how the CLI maps them to exit codes: anything that
/// indicates bad user input (format, shape, validation) exits 1, I/O and
/// numeric failures exit 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: bad magic {found:?}, expected \"OSEG\"")]
    BadMagic { path: PathBuf, found: String },

    #[error("{path}: unsupported format version {version}, expected 1")]
    BadVersion { path: PathBuf, version: u32 },

    #[error("{path}: unsupported dtype code {dtype}, expected 0 (f32) or 1 (u8)")]
    BadDtype { path: PathBuf, dtype: u32 },

    #[error("{path}: unsupported rank {ndim}, expected 3 or 4")]
    BadRank { path: PathBuf, ndim: u32 },

    #[error("{path}: payload holds {actual} bytes, header implies {expected}")]
    PayloadSize {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("{0}")]
    Validation(String),

    #[error("unsupported primitive in differentiable graph: {0}")]
    UnsupportedPrimitive(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(context: impl ToString, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context: context.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid inputs rather than runtime failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Numeric(_))
    }
}
