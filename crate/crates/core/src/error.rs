use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward: tape is empty")]
    EmptyTape,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
    #[error("parameter {0} has no gradient")]
    MissingGrad(usize),
    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfVocab { token: usize, vocab: usize },
    #[error("sequence length {got} does not match configured length {expected}")]
    SeqLenMismatch { expected: usize, got: usize },
    #[error("batch of {batch} is larger than the split ({len} examples)")]
    BatchTooLarge { batch: usize, len: usize },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("no batches supplied")]
    EmptyBatches,
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("mapping accumulator is empty")]
    EmptyAccumulator,
    #[error("training diverged at step {step} (loss is not finite)")]
    Diverged { step: usize },
}
