use thiserror::Error;

/// Crate-wide error type.
///
/// `Parse`, `Validation`, `Dimension`, and `Config` indicate bad inputs
/// (CLI exit code 1); the rest are runtime failures (exit code 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    /// True when the error stems from invalid user input rather than a
    /// runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation(_) | Error::Dimension(_) | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
