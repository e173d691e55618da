use std::fmt;

/// Errors reported by the summation and aggregation routines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// An input value at the given position is NaN or infinite.
    NonFiniteInput { index: usize },
    /// A scalar argument is NaN or infinite where a finite value is required.
    NonFinite,
    /// `ulp` is undefined for zero.
    UlpOfZero,
    /// A level shift would push the first-level exponent past the format maximum.
    Overflow { exponent: i32, max: i32 },
    /// Parameter validation failed.
    InvalidParams(String),
    /// Two states with incompatible parameters were combined.
    ParamMismatch,
    /// A deserialized or externally supplied state violates its invariants.
    InvalidState(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFiniteInput { index } => {
                write!(f, "non-finite input value at index {index}")
            }
            Error::NonFinite => write!(f, "non-finite value where a finite one is required"),
            Error::UlpOfZero => write!(f, "ulp is undefined for zero"),
            Error::Overflow { exponent, max } => write!(
                f,
                "running-sum exponent {exponent} exceeds format maximum {max}"
            ),
            Error::InvalidParams(msg) => write!(f, "invalid parameters: {msg}"),
            Error::ParamMismatch => write!(f, "states have incompatible parameters"),
            Error::InvalidState(msg) => write!(f, "invalid state: {msg}"),
        }
    }
}

impl std::error::Error for Error {}
