//! Dense tensors with reverse-mode automatic differentiation.

pub mod check;
mod graph;
pub mod nn;
mod tensor;

pub use graph::{sigmoid, Binary, Gradients, Graph, Unary, Var};
pub use tensor::Tensor;
