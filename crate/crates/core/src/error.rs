//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between two operands. Names both shapes.
    #[error("dimension mismatch in {op}: left shape {left:?}, right shape {right:?}")]
    DimMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A single tensor has a shape the operation cannot accept.
    #[error("invalid dimension in {op}: shape {shape:?} ({reason})")]
    InvalidDim {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    /// A scalar or enum parameter is out of range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// An operation contract was violated (e.g. backward on a non-scalar root).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numerically degenerate input (e.g. constant row into a LayerNorm Jacobian).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Configuration file / CLI errors.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}
