//! Tensors, convolution, reverse-mode gradients and the Adam optimizer.

mod adam;
pub(crate) mod conv;
mod graph;
mod layer;
pub mod par;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use graph::{Function, Graph, Var};
pub use layer::{apply_conv, conv2d, Activation, ConvLayer};
pub use scalar::Scalar;
pub use tensor::Tensor;
