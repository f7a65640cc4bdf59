//! Cross-shaped window transformer UNet for volumetric lesion detection.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! * [`tensor`]: dense tensors with reverse-mode differentiation and
//!   [`gradcheck`] for finite-difference verification;
//! * [`attention`]: 3-D stripe partitioning and scaled cosine attention;
//! * [`unet`]: the hierarchical encoder, CNN decoder and checkpoints;
//! * [`ssl`]: augmentation, pretext heads, losses and the pretraining loop;
//! * [`finetune`]: dice-focal segmentation training;
//! * [`eval`]: lesion candidate extraction, matching and statistics;
//! * [`data`]: volume files, preprocessing and synthetic phantoms.
//!
//! Numerics are generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below fix the common instantiations.

pub mod attention;
pub mod data;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod ssl;
pub mod tensor;
mod train;
pub mod unet;

pub use error::{Error, Result};
pub use params::{Bound, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Array, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Array32 = Array<f32>;
pub type Array64 = Array<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;


