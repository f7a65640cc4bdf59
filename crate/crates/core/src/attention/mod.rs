//! Cross-shaped window self-attention over 3-D token grids.

mod block;
mod kernel;
mod stripes;

pub use block::{stripe_self_attention, BlockConfig, CSwinBlock, HeadGroup, NormPlacement};
pub use kernel::{attention_logits, scaled_cosine_attention, temperature, Similarity, TAU_MIN};
pub use stripes::{merge_stripes, partition_stripes, StripeAxis, StripeConfig, StripeLayout, Stripes};
