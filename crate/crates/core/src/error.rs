use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error(
        "{players} players exceed the exact enumeration limit of {limit}; \
         use a MonteCarlo or Kernel sampling scheme instead"
    )]
    TooManyPlayers { players: usize, limit: usize },

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    ///
    /// 2 = configuration, 3 = data, 4 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownMethod(_) | Error::TooManyPlayers { .. } => 2,
            Error::Data(_) | Error::Corrupt(_) | Error::Io(_) | Error::Json(_) => 3,
            Error::InvalidInput(_)
            | Error::Dimension(_)
            | Error::IndexOutOfRange { .. }
            | Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
