//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod fdiff;
mod ops;
mod tape;
mod tensor;

pub use fdiff::{finite_difference_gradient, max_relative_error};
pub use ops::{Eager, Ops, Primitive};
pub use tape::{Gradients, Tape};
pub use tensor::{NodeId, Tensor};
