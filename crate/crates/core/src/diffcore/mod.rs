//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] records primitives as they execute; [`Tape::backward`] consumes
//! it and returns [`Gradients`] for every leaf created with [`Tape::param`].
//! Tapes are single-threaded; independent tapes may live on different threads.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    central_difference, finite_diff_check, finite_diff_check_directions, finite_diff_check_params, relative_error,
};
pub use params::{ParamId, ParamSet, Session};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Shape, Tensor, MAX_RANK};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("rank {0} exceeds the supported maximum of 3")]
    RankTooHigh(usize),
    #[error("zero extent in shape {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("data length {got} does not match shape volume {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("{0} needs at least one operand")]
    EmptyOperands(&'static str),
    #[error("slice {start}..{start}+{len} out of range for extent {extent}")]
    SliceOutOfRange { start: usize, len: usize, extent: usize },
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("{op}: {len} indices do not match operand shape {dims:?}")]
    IndexShape {
        op: &'static str,
        dims: Vec<usize>,
        len: usize,
    },
    #[error("mask has {got} entries, operand has {expected}")]
    MaskLength { expected: usize, got: usize },
    #[error("softmax row has every position masked")]
    FullyMasked,
    #[error("loss must be rank 0, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable does not belong to this tape (tape already consumed or foreign)")]
    ForeignVar,
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}
