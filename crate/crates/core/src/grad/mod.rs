//! Tape-based reverse-mode differentiation over a closed set of primitives,
//! plus the AdamW optimizer and learning-rate schedule.

mod optim;
mod tape;
mod tensor;

use thiserror::Error;

pub use optim::{adam_step, clip_global_norm, lr_at, AdamState, TrainConfig};
pub use tape::{ConvMode, ScanMode, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: index {index} at position {position} is out of range 0..{bound}")]
    Index { op: &'static str, position: usize, index: usize, bound: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
}
