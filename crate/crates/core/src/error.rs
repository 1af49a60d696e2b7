use std::time::Duration;

use thiserror::Error;

/// Failure of a single blackbox evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("evaluation process exited: {0}")]
    ProcessExited(String),
    #[error("malformed reply from evaluation process: {0:?}")]
    Malformed(String),
    #[error("evaluation timed out after {0:?}")]
    Timeout(Duration),
    #[error("evaluation I/O failure: {0}")]
    Io(String),
    #[error("objective returned a non-finite value ({0})")]
    NonFinite(f64),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),

    #[error(transparent)]
    Evaluation(#[from] EvalError),

    #[error("gradient estimate is not finite at component {index}")]
    NonFiniteGradient { index: usize },

    #[error("evaluation cache is empty")]
    EmptyCache,

    #[error("no k <= {k_max} satisfies {condition}")]
    ConditionNotFound { condition: &'static str, k_max: u64 },

    #[error("insufficient data: need at least {needed} points, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("malformed trace line {line}: {message}")]
    Trace { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
