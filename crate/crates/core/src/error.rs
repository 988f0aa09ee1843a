use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A constructor rejected its parameters; the message names the constraint.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A requested computation exceeds the configured resource budget.
    #[error("budget exceeded: {what} needs {requested}, limit is {limit}")]
    Budget {
        what: &'static str,
        requested: u128,
        limit: u128,
    },

    /// A structural invariant failed after construction.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("product diverges to zero: {0}")]
    Diverges(String),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
