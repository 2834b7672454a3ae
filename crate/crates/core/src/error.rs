use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the placement engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    Parse(String),

    #[error("invalid design: {0}")]
    Validation(String),

    #[error("combinational cycle through {0}")]
    CombinationalCycle(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
