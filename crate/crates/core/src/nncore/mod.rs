//! Dense numeric kernel: matrices, neural layers with hand-derived
//! gradients, losses, the Adam optimizer, and a finite-difference checker.
//!
//! Everything is generic over [`Scalar`] so the exact same code paths run in
//! f32 for training and in f64 for gradient verification.

mod conv;
mod dense;
mod gradcheck;
mod loss;
mod lstm;
mod matrix;
mod norm;
mod param;
mod seq;

pub use conv::{Conv1dCtx, Conv1dLayer};
pub use dense::{Activation, DenseCtx, DenseLayer};
pub use gradcheck::{finite_difference_check, GradCheck, DEFAULT_FD_STEP};
pub use loss::{loss, softmax, softmax_backward, softmax_rows, LossKind};
pub use lstm::{LstmCtx, LstmLayer, LstmReturn, LstmSignal};
pub use matrix::{Matrix, Scalar};
pub use norm::{dropout_backward, dropout_forward, BatchNorm1d, BnCtx};
pub use param::{adam_step, glorot_uniform, AdamConfig, ParamBlock};
pub use seq::{
    dimension_shuffle, global_avg_pool, global_avg_pool_backward, SequenceTensor,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kernel width {kernel} exceeds input length {timesteps}")]
    KernelTooLarge { kernel: usize, timesteps: usize },
    #[error("batch normalization requires a training batch of at least 2, got {0}")]
    DegenerateBatch(usize),
}

/// Whether a pass may use batch statistics and randomness (training) or must
/// be a pure deterministic function of its input (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
