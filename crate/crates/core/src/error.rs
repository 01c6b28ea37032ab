use std::io;

/// Errors surfaced by every layer of the crate.
///
/// The variants map one-to-one onto the CLI exit codes (see [`GenliError::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum GenliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("state error: {0}")]
    State(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl GenliError {
    pub fn config(msg: impl Into<String>) -> Self {
        GenliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        GenliError::Data(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            GenliError::Config(_) => 2,
            GenliError::Data(_) | GenliError::UndefinedMetric(_) | GenliError::Io(_) => 3,
            GenliError::Numerical(_) => 4,
            GenliError::State(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, GenliError>;
