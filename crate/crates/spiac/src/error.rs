use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or length mismatch between tensors, networks, or buffers.
    #[error("invalid shape: {0}")]
    Shape(String),
    /// An argument outside the contract of an operation.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// A numeric value outside its domain (NaN, infinity, out of range).
    #[error("invalid value: {0}")]
    Value(String),
    /// The operation cannot run yet (e.g. replay buffer still filling).
    #[error("not ready: {0}")]
    NotReady(String),
    /// Malformed run configuration or config/grid file.
    #[error("config error: {0}")]
    Config(String),
    /// Curve files whose timesteps do not line up.
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
