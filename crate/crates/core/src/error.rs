use thiserror::Error;

/// Errors produced by the modelling engines, data layer and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed expression tree or model (bad arity, unknown operator, bad variable index).
    #[error("structural error: {0}")]
    Structural(String),
    /// Non-finite input or a numerical routine that could not produce a result.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Invalid argument passed to an operation.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Unreadable or malformed data file.
    #[error("data error: {0}")]
    Data(String),
    /// Invalid experiment configuration.
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
