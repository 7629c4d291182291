pub mod conv;
mod elementwise;
mod matmul;
mod nn;
pub(crate) mod reduce;
mod resize;
mod shape_ops;
