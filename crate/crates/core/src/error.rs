use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PbjError>;

#[derive(Debug, Error)]
pub enum PbjError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("rank-deficient design: columns {columns:?} are linearly dependent on earlier columns")]
    RankDeficient { columns: Vec<usize> },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error in {path} at row {row}, column {col}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PbjError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PbjError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PbjError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            PbjError::Io { .. } | PbjError::Parse { .. } => 3,
            PbjError::Numerical(_) => 4,
            _ => 2,
        }
    }
}
