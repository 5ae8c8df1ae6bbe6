//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The op set is exactly what the whitening/rotation layers and the toy host
//! networks need: matrix products, column broadcasts, reductions, convolution,
//! pooling, layout permutations, and a softmax cross-entropy head. All
//! reductions run in a fixed order, so identical inputs give bit-identical
//! outputs.

mod backward;
mod conv;
mod ops;
mod tensor;

pub use backward::{backward, Gradients};
pub use tensor::Tensor;
