//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! The op set is closed over what the encoder-decoder Transformer needs:
//! batched matmul, broadcasting add/sub/mul, scale, tanh, GELU, (causal)
//! softmax, layer norm, dropout, reshape/transpose/head swaps, concat and
//! reductions including mean squared error.

mod graph;
pub mod gradcheck;
mod real;
mod tensor;

pub use graph::{Graph, Var};
pub use real::Real;
pub use tensor::Tensor;
