use thiserror::Error;

use crate::geometry::Role;

pub type Result<T, E = RqaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RqaError {
    /// A field or its derivatives produced a non-finite number.
    #[error("evaluation failure at x={x:?}, t={t}: {what} is not finite")]
    Evaluation { x: Vec<f64>, t: f64, what: &'static str },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("training diverged at iteration {iteration} ({role}): {detail}")]
    Divergence {
        iteration: usize,
        role: Role,
        detail: String,
    },

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RqaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RqaError::InvalidInput(msg.into())
    }
}
