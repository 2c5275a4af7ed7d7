use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("axis {axis} out of range for tensor of rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("index {index} out of bounds for axis of size {size}")]
    IndexOutOfBounds { index: usize, size: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("degenerate embedding at index {index}: norm {norm:e} is not above 1e-12")]
    DegenerateEmbedding { index: usize, norm: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),
    #[error("sample {sample} has no present views")]
    NoPresentViews { sample: usize },
    #[error("view weights for sample {sample} sum to {sum}, expected 1")]
    WeightsNotNormalized { sample: usize, sum: f64 },
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
    #[error("invalid data: {0}")]
    Data(String),
}
