use crate::attention::{BlockConfig, CSwinBlock};
use crate::error::{Error, Result};
use crate::nn::{Conv3d, LayerNorm};
use crate::params::{Bound, ParamBuilder};
use crate::scalar::Scalar;
use crate::tensor::ops::ConvGeometry;
use crate::tensor::Tensor;

use super::config::UNetConfig;

fn reducing(kernel: usize, padding: usize, stride: [usize; 3]) -> ConvGeometry {
    // A stride-1 axis keeps its extent with the same kernel and padding.
    ConvGeometry { kernel: [kernel; 3], stride, padding: [padding; 3] }
}

/// Channel-first feature maps produced by the encoder.
#[derive(Clone, Debug)]
pub struct EncoderFeatures<T: Scalar> {
    /// Output of the first embedding convolution, 1/2 resolution, width F.
    pub embed: Tensor<T>,
    /// Stage outputs at 1/4, 1/8, 1/16 and 1/32 resolution.
    pub stages: [Tensor<T>; 4],
}

impl<T: Scalar> EncoderFeatures<T> {
    pub fn bottleneck(&self) -> &Tensor<T> {
        &self.stages[3]
    }
}

#[derive(Clone, Debug)]
struct Stage {
    /// Reduction conv and its norm; stage 1 uses the second embedding conv.
    reduce: Conv3d,
    norm: LayerNorm,
    blocks: Vec<CSwinBlock>,
}

/// Convolutional token embedding followed by four CSwin stages.
#[derive(Clone, Debug)]
pub struct CSwinEncoder {
    pub cfg: UNetConfig,
    embed: Conv3d,
    stages: Vec<Stage>,
}

impl CSwinEncoder {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, cfg: &UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let strides = cfg.strides();
        let f = cfg.feature_size;
        let embed = Conv3d::new(b, "embed", cfg.in_channels, f, reducing(7, 3, strides[0]), true)?;
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let mut s = b.sub(&format!("stage{}", i + 1));
            let cin = if i == 0 { f } else { cfg.stage_dim(i - 1) };
            let dim = cfg.stage_dim(i);
            let reduce = Conv3d::new(&mut s, "reduce", cin, dim, reducing(3, 1, strides[i + 1]), true)?;
            let norm = LayerNorm::new(&mut s, "norm", dim)?;
            let block_cfg = BlockConfig {
                dim,
                heads: cfg.heads[i],
                sw: cfg.stripe_widths[i],
                grid: cfg.stage_grid(i),
                use_cosine: cfg.use_cosine,
                mlp_ratio: cfg.mlp_ratio,
                norm: cfg.norm,
            };
            let blocks = (0..cfg.depths[i])
                .map(|j| CSwinBlock::new(&mut s.sub(&format!("block{j}")), block_cfg))
                .collect::<Result<_>>()?;
            stages.push(Stage { reduce, norm, blocks });
        }
        Ok(Self { cfg: cfg.clone(), embed, stages })
    }

    /// Checks `x` is `(N, Cin, H, W, D)` with the configured extents.
    pub fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let [h, w, d] = self.cfg.input_shape;
        match *x.shape() {
            [_, c, xh, xw, xd] if c == self.cfg.in_channels && [xh, xw, xd] == [h, w, d] => Ok(()),
            _ => Err(Error::shape("encoder input", x.shape(), &[self.cfg.in_channels, h, w, d])),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<EncoderFeatures<T>> {
        self.check_input(x)?;
        let embed = self.embed.forward(p, x)?.gelu()?;
        let mut h = embed.clone();
        let mut outs = Vec::with_capacity(4);
        for stage in &self.stages {
            let reduced = stage.reduce.forward(p, &h)?;
            let mut t = stage.norm.forward(p, &reduced.permute(&[0, 2, 3, 4, 1])?)?;
            for block in &stage.blocks {
                t = block.forward(p, &t)?;
            }
            h = t.permute(&[0, 4, 1, 2, 3])?;
            outs.push(h.clone());
        }
        let stages: [Tensor<T>; 4] = outs.try_into().expect("four stages");
        Ok(EncoderFeatures { embed, stages })
    }
}
