use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("codebook index {index} out of range for vocabulary of size {size}")]
    Index { index: usize, size: usize },

    /// An operation was called on a value in an unusable state (e.g. an empty selection).
    #[error("invalid state: {0}")]
    State(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error in {source_name} at line {line}, column {column}: {message}")]
    Config {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Wraps a JSON parse failure with the source name and its line context.
    pub fn config(source_name: impl Into<String>, err: &serde_json::Error) -> Self {
        Error::Config {
            source_name: source_name.into(),
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
