use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::interner::TokenHandle;

pub type Result<T, E = KelpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum KelpError {
    #[error("tokenization produced an empty token")]
    EmptyToken,

    #[error("token handle {0:?} is not live")]
    StaleHandle(TokenHandle),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("line of {got} tokens routed to a bucket of width {expected}")]
    Routing { expected: usize, got: usize },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl KelpError {
    pub(crate) fn invariant(msg: impl Into<String>) -> Self {
        KelpError::Invariant(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| KelpError::File { path, source }
    }

    /// Process exit code: 1 usage/config, 2 I/O, 3 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            KelpError::Config(_) | KelpError::Evaluation(_) | KelpError::Json(_) => 1,
            KelpError::Io(_) | KelpError::File { .. } => 2,
            KelpError::Csv(e) if e.is_io_error() => 2,
            KelpError::Csv(_) => 1,
            KelpError::EmptyToken
            | KelpError::StaleHandle(_)
            | KelpError::Invariant(_)
            | KelpError::Routing { .. }
            | KelpError::Structural(_) => 3,
        }
    }
}
