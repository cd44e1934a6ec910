//! Minimal deterministic feed-forward trainer.
//!
//! Dense layers with ReLU or identity activations, mean softmax cross-entropy,
//! SGD or Adam, and MNIST IDX ingestion. Everything runs single-threaded in a
//! fixed order, so a seed fully determines the trained parameters.

mod checkpoint;
mod mnist;
mod model;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, model_from_bytes, model_to_bytes, save_checkpoint, CheckpointError};
pub use mnist::{load_mnist_idx, parse_idx_images, parse_idx_labels, Dataset, MnistError, Split};
pub use model::{
    forward, loss, loss_and_backward, Activation, ForwardCache, Gradients, Layer, LayerGrad,
    MlpModel, LENET_300_100,
};
pub use optim::{OptimizerKind, OptimizerState, StepDecay, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use train::{evaluate, train, MetricRecord, TrainHook, TrainLog, TrainOptions, EVAL_EVERY};

use crate::linalg::LinalgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("label {label} at row {row} is outside 0..{classes}")]
    Label { row: usize, label: usize, classes: usize },
    #[error("invalid training option: {0}")]
    Options(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("training hook failed: {0}")]
    Hook(#[source] Box<dyn std::error::Error + Send + Sync>),
}

pub type Result<T> = std::result::Result<T, NnError>;
