//! Dense n-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Every op records itself on the output when any input requires a gradient;
//! [`Tensor::backward`] then walks the graph from a scalar root and
//! accumulates into leaf gradients. Layouts are row-major and images are
//! channels-first `(N, C, H, W)`.

mod dispatch;
mod error;
mod float;
pub mod gradcheck;
pub mod mode;
mod ops;
pub mod shape;
mod tensor;

pub use dispatch::{apply_op, OpAttrs, OP_NAMES};
pub use error::{Result, TensorError};
pub use float::Float;
pub use gradcheck::{gradcheck, GradcheckReport};
pub use ops::conv::Conv2dParams;
pub use tensor::{OpNode, Tensor};
