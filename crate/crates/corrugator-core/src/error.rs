//! Crate-wide error and result types.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by construction, evaluation, and verification.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameters (precision too low, empty
    /// rectangle, inconsistent grid dimensions, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Expression text failed to parse; `offset` is the byte position in the
    /// input at which the problem was detected.
    #[error("parse error at offset {offset}: {message}")]
    Parse { message: String, offset: usize },

    /// A numeric operation left its domain (square root of a negative
    /// number, division by zero, non-finite construction).
    #[error("domain error: {0}")]
    Domain(String),

    /// A field evaluation hit a singular point, e.g. a square root guarded
    /// by a positive floor dipped below it.
    #[error("singular evaluation at ({x}, {y}): {message}")]
    Singular {
        message: String,
        x: String,
        y: String,
    },

    /// A derivative of higher order than the evaluator supports was
    /// requested.
    #[error("jet order {requested} exceeds supported maximum {max}")]
    JetOrder { requested: u32, max: u32 },

    /// A verified inequality failed, or a stage could not meet its
    /// contract.
    #[error("verification failure: {0}")]
    Verification(String),
}

impl Error {
    /// Shorthand for a [`Error::Config`] with a formatted message.
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Shorthand for a [`Error::Domain`] with a formatted message.
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Shorthand for a [`Error::Verification`] with a formatted message.
    pub fn verification(msg: impl Into<String>) -> Self {
        Error::Verification(msg.into())
    }
}
