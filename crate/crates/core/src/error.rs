use thiserror::Error;

/// Errors produced by the disentanglement toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input data violated a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A binary or structured file did not match its format.
    #[error("format error: {0}")]
    Format(String),

    /// A configuration value was out of range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Training failed (e.g. a non-finite gradient).
    #[error("training error: {0}")]
    Train(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
