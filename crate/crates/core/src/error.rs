use alloc::boxed::Box;
use alloc::string::String;

use crate::dpd::DpdModel;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("message {value} out of range for a {order}-point constellation (index {index})")]
    MessageOutOfRange { index: usize, value: usize, order: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("{what} is empty or all-zero")]
    ZeroSignal { what: &'static str },

    #[error("non-finite value in {stage} at index {index}")]
    NonFinite { stage: &'static str, index: usize },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("least-squares problem is rank deficient (condition estimate {condition:e}); use a ridge > 0")]
    IllConditioned { condition: f64 },

    #[error("training failed: {0}")]
    Training(String),

    /// Non-finite loss or gradient in the RL loop; carries the last finite model.
    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        last_good: Box<DpdModel>,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_finite(stage: &'static str, xs: &[num_complex::Complex64]) -> Result<()> {
    match xs.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        Some(index) => Err(Error::NonFinite { stage, index }),
        None => Ok(()),
    }
}
