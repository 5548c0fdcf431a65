use std::path::{Path, PathBuf};

use divseg_nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Decode { path: PathBuf, message: String },
    #[error("not available: {0}")]
    NotAvailable(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn decode(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Error::Decode {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    /// Errors caused by what the caller supplied (paths, flags, files,
    /// configuration), as opposed to faults inside the toolkit.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Internal(_) | Error::NonFinite(_))
    }
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Shape(m) => Error::Shape(m),
            NnError::Config(m) => Error::Config(m),
            NnError::Format(m) => Error::InvalidInput(m),
            NnError::Io(e) => Error::Internal(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
