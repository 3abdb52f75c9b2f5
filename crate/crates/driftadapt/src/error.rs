//! Crate-wide error type. Numerical routines return `Error::Numerical` instead
//! of silently propagating NaN/Inf; everything else is the usual suspects.

use crate::tensor::{Dtype, Shape};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dtype mismatch: expected {expected:?}, got {got:?}")]
    Dtype { expected: Dtype, got: Dtype },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
