//! Reverse-mode automatic differentiation with support for one recorded
//! backward pass (double backpropagation).

mod backward;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;
