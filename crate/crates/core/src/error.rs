use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument to an operation (negative time, non-finite point, ...).
    #[error("invalid input: {0}")]
    Input(String),

    /// Model parameters that violate the reference-model invariants.
    #[error("invalid model: {0}")]
    Model(String),

    /// Non-finite values produced or supplied where finite ones are required.
    #[error("invalid data: {0}")]
    Data(String),

    /// Configuration that cannot be run (CFL violation, unsupported stencil, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// The enumeration oracle refuses instances that would take too long.
    #[error("oracle instance too large: {plans} plans exceed the limit of {limit}")]
    OracleTooLarge { plans: u128, limit: u128 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
