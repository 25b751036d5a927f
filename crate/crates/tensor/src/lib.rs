//! Minimal dense-tensor engine: row-major `f64` tensors, a single-use
//! reverse-mode tape, and the kernel set used by the gait model
//! (convolutions, reductions, pooling, GeM, batch-norm, losses).

pub mod codec;
mod error;
pub mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{concat, sigmoid_scalar, BatchStats, BnMode, ConvKernel, Padding, ReduceMode};
pub use tape::{GradSink, Gradients, Tape, Var};
pub use tensor::{numel, strides, Tensor};
