//! The encoder-decoder network and its checkpoint container.

mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod model;

pub use checkpoint::{Checkpoint, TensorEntry};
pub use config::{UNetConfig, DOWNSAMPLINGS};
pub use decoder::{Decoder, ResBlock, SkipMask, UpBlock};
pub use encoder::{CSwinEncoder, EncoderFeatures};
pub use model::{CSwinUNet, NUM_CLASSES};
