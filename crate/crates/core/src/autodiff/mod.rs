//! Tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
pub mod conv;
mod float;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use conv::{conv2d, conv_transpose2d, Padding};
pub use float::Float;
pub use tape::{Axis, BatchStats, Gradients, NormMode, Tape, Var};
pub use tensor::Tensor;
