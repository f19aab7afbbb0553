use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV cell or row could not be read. `line` is 1-based and counts the header.
    #[error("parse error at line {line}, column `{column}`: {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error("validation error at line {line}: {message}")]
    Validation { line: u64, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split produced an empty training set")]
    EmptyTrain,

    #[error("split produced an empty test set")]
    EmptyTest,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("expected {expected} features, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("unsupported document: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures that come from the filesystem rather than from the data or the configuration.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}
