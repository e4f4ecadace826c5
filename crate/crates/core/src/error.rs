use alloc::string::String;

/// Errors produced by the solver, network and data routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("signal length {0} is not a perfect square")]
    NonSquareImage(usize),
    #[error("signal has zero energy under the sensing operator")]
    ZeroSignal,
    #[error("scale value {value} at index {index} lies outside the regularizer domain")]
    Domain { index: usize, value: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("backtracking line search gave up after {0} halvings")]
    LinesearchFailure(u32),
    #[error("accelerated gradient iteration diverged: cost rose for {0} consecutive steps")]
    Divergence(usize),
    #[error("cost increased by {increase:e} at outer iteration {iter}")]
    NonMonotoneCost { iter: usize, increase: f64 },
    #[error("tape does not match the supplied gradient or parameters: {0}")]
    TapeMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("not enough images: need {needed}, have {available}")]
    InsufficientImages { needed: usize, available: usize },
    #[error("regularizer has no closed form: {0}")]
    Unsupported(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
