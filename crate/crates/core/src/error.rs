use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("transport failure for {context} (status {status:?}): {message}")]
    Transport {
        context: String,
        status: Option<u16>,
        message: String,
    },

    #[error("prompt is {len} characters, over the budget of {budget}; raise theta to select fewer representatives")]
    PromptOverBudget { len: usize, budget: usize },

    #[error("cache for question {question_id} holds {have} of {want} samples; run `asc generate` first")]
    IncompleteCache {
        question_id: String,
        have: usize,
        want: usize,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
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

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Transport { .. } => 2,
            Error::IncompleteCache { .. } => 3,
            _ => 1,
        }
    }
}
