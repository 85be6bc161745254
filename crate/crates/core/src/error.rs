use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The byte stream is not a well-formed OMSB container.
    #[error("format error: {0}")]
    Format(String),

    /// A required entry is missing or has the wrong dtype/rank.
    #[error("schema error: {0}")]
    Schema(String),

    /// A bundle invariant does not hold.
    #[error("validation error: {message}")]
    Validation { message: String, sample: Option<usize> },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 validation, 4 fit/eval.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format(_) | Error::Schema(_) | Error::Validation { .. } => 3,
            Error::Fit(_) | Error::Usage(_) => 4,
            Error::Io(_) => 1,
        }
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation {
            message: msg.into(),
            sample: None,
        }
    }

    pub(crate) fn validation_at(sample: usize, msg: impl Into<String>) -> Self {
        Error::Validation {
            message: format!("sample {sample}: {}", msg.into()),
            sample: Some(sample),
        }
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
