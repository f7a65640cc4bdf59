//! Differentiable operations on [`Tensor`](super::Tensor).

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod reduce;
mod shape;
mod softmax;

pub use conv::{conv3d_reference, ConvGeometry};
pub use softmax::KeyMask;
