//! Dense tensors, parameters, and the differentiation tape.

mod basic;
pub(crate) mod bytes;
pub mod checkpoint;
mod param;
mod scalar;
pub mod tape;
mod tensor;

pub use basic::{gelu_grad_scalar, gelu_scalar, ElementwiseOp, GELU_FLOPS_PER_ELEMENT};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry};
pub use param::{Param, ParamId, ParamSet};
pub use scalar::{DType, Scalar};
pub use tape::{Backward, BackwardCtx, Gradients, Tape, Var};
pub use tensor::Tensor;
