//! Weight distortion functions: magnitude pruning with a gradual schedule,
//! multi-bit (greedy / refined / alternating) quantization and truncated-SVD
//! low-rank approximation, including the shared-projection factorization.
//!
//! Every distortion maps a weight matrix to a full-precision matrix of the same
//! shape that already sits in the compressed format.

mod lowrank;
mod prune;
mod quant;

pub use lowrank::{
    compression_ratio, lowrank_distort, numerical_rank, shared_projection, tail_mass_ratio,
    truncate_to_factors, LowRankForm, SharedProjection,
};
pub use prune::{
    prune_count, prune_distort, prune_distort_global, PrunedLayer, PruningSchedule,
};
pub use quant::{
    alternating_quantize, alternating_quantize_traced, binary_quantize, greedy_quantize,
    quantize_distort, refine_alphas, Granularity, QuantStatus, QuantizedForm, QuantizerKind,
    ALTERNATING_MAX_ITERS, ALTERNATING_REL_TOL,
};

use crate::linalg::LinalgError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompressError {
    #[error("{what} out of range: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("invalid pruning schedule: {0}")]
    Schedule(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no layers given")]
    EmptyInput,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, CompressError>;
