//! Dense tensors with reverse-mode differentiation.

mod tape;
mod tensor;

pub use tape::{ElementwiseKind, GradientMap, ReduceKind, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck_tests;
