//! Model compression by occasional weight distortion.
//!
//! Training runs unmodified; every few steps a distortion function replaces
//! selected weight matrices with their nearest compressed-form representative
//! (magnitude-pruned, multi-bit quantized, or rank-truncated). The next batches
//! train on the distorted weights, and training ends right after a distortion so
//! the final model is already compressed.
//!
//! - [`linalg`]: dense matrices, products, Jacobi SVD, least squares.
//! - [`compress`]: the distortion kernels and their supporting decompositions.
//! - [`nn`]: a small deterministic MLP trainer with MNIST IDX loading.
//! - [`deeptwist`]: the training hook that schedules distortions.

pub mod compress;
pub mod deeptwist;
pub mod linalg;
pub mod nn;

pub use compress::{
    Granularity, LowRankForm, PruningSchedule, QuantizedForm, QuantizerKind, SharedProjection,
};
pub use deeptwist::{
    make_hook, verify_compressed_form, Assignment, DeepTwistConfig, DeepTwistHook, DistortionEvent, Method,
};
pub use linalg::{Matrix, SvdResult};
pub use nn::{Dataset, MlpModel, OptimizerKind};
