use thiserror::Error;

/// Error type shared across the crate.
///
/// Variants are grouped by category so the CLI can map them to exit codes:
/// configuration problems, data/IO problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("vocab error: {0}")]
    Vocab(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("lookup error: no parameter named {0}")]
    Lookup(String),

    #[error("state error: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    /// Exit-code category for the CLI: 2 config, 3 data, 4 numeric, 1 other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Vocab(_) | Error::Lookup(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Checkpoint(_) => 3,
            Error::Numeric(_) | Error::ShapeMismatch { .. } => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
