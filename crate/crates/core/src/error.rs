use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: expected {expected} fields, found {found}")]
    MalformedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error in {dim}: expected {expected}, found {found}")]
    Shape {
        dim: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("corrupted artifact: {0}")]
    Corruption(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn shape(dim: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Shape {
            dim: dim.into(),
            expected,
            found,
        }
    }

    /// True for errors caused by bad or missing user input (files, configs).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::NotFound(_)
                | Error::Io { .. }
                | Error::MalformedRow { .. }
                | Error::Parse { .. }
                | Error::Integrity(_)
                | Error::Validation(_)
                | Error::Json(_)
        )
    }

    /// True for errors raised while verifying a stored artifact.
    pub fn is_integrity_error(&self) -> bool {
        matches!(self, Error::Corruption(_) | Error::ConfigMismatch(_))
    }
}
