//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad architecture descriptor, impossible filter
    /// bank, unknown config key, ...). Maps to exit code 2 in the CLI.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or out-of-contract input data (short clips, bad headers,
    /// mismatched feature shapes, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Tensor shape violation in a network or loss computation.
    #[error("shape error: {0}")]
    Shape(String),

    /// API misuse (non-scalar loss in backward, missing objective term, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// An utterance could not be dispatched to a generator instance.
    #[error("routing error: {0}")]
    Routing(String),

    /// Line-oriented parse failure (manifest or config file).
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code convention: 2 for usage/configuration problems the caller
    /// can fix, 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Parse { .. } => 2,
            _ => 1,
        }
    }
}
