//! Minimal reverse-mode automatic differentiation over dense `f32` tensors,
//! plus AdamW with a linear warmup schedule.

mod optim;
mod tape;
mod tensor;

pub use optim::{adamw_step, clip_grad_norm, AdamWConfig, Moments, OptimizerState};
pub use tape::{AttentionLayout, OpKind, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[allow(unused_imports)]
pub(crate) use tape::{dot, gelu, gemm, normalize_row, softmax_in_place};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op} expects {expected} inputs, got {got}")]
    Arity { op: String, expected: usize, got: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("row slice [{start}, {start}+{len}) out of range for {rows} rows")]
    SliceOutOfRange { start: usize, len: usize, rows: usize },
    #[error("cross entropy: every target is padding, nothing to supervise")]
    NoSupervisedPositions,
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },
}
