use alloc::string::String;
use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid Q-format: {total_bits} total bits with {frac_bits} fractional bits")]
    InvalidFormat { total_bits: u32, frac_bits: u32 },

    #[error("invalid lookup table: {0}")]
    InvalidLut(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("signal too short: need {needed} samples per channel, got {got}")]
    SignalTooShort { needed: usize, got: usize },

    #[error("scaled sample {value} at index {index} lies outside [-1, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("expected {expected} windows, got {got}")]
    WindowCount { expected: usize, got: usize },

    #[error("{bank} capacity exceeded: need {needed} bits, have {capacity}")]
    BankCapacity {
        bank: &'static str,
        needed: u64,
        capacity: u64,
    },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
