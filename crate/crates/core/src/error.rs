use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum KogError {
    /// Malformed skeleton: disconnected, cyclic, out-of-range or duplicate edges.
    #[error("invalid skeleton: {0}")]
    Structure(String),

    /// Incompatible tensor shapes.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Bad hyperparameter or configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse, e.g. backward on a non-scalar.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Dataset content that does not match the declared schema.
    #[error("dataset error at {path}:{line}: {msg}")]
    Dataset {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = KogError> = std::result::Result<T, E>;

impl KogError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        KogError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KogError::Io {
            path: path.into(),
            source,
        }
    }
}
