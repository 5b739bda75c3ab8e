use thiserror::Error;

use crate::diffcore::DiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("input set is empty")]
    EmptySet,
    #[error("elements have heterogeneous dimensions")]
    Heterogeneous,
    #[error("requested {steps} pointer steps over {n} elements with masking enabled")]
    TooManySteps { steps: usize, n: usize },
    #[error("symbol {symbol} outside vocabulary of size {vocab}")]
    OutOfVocabulary { symbol: usize, vocab: usize },
    #[error("sequence length {len} exceeds positional capacity {capacity}")]
    Capacity { len: usize, capacity: usize },
    #[error("not a permutation of 1..={0}")]
    NotAPermutation(usize),
    #[error("{n} elements is too many for exhaustive ordering search (max {max})")]
    TooLargeForExhaustive { n: usize, max: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
