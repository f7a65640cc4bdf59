use crate::error::{Error, Result};
use crate::nn::{Conv3d, ConvTranspose3d, IN_EPS};
use crate::params::{Bound, ParamBuilder};
use crate::scalar::Scalar;
use crate::tensor::ops::ConvGeometry;
use crate::tensor::Tensor;

use super::config::UNetConfig;
use super::encoder::EncoderFeatures;

const LEAKY_SLOPE: f64 = 0.01;

/// Two 3x3x3 convolutions with instance normalization and a residual path
/// (1x1x1 projection when the width changes).
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv3d,
    conv2: Conv3d,
    skip: Option<Conv3d>,
}

impl ResBlock {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let mut s = b.sub(name);
        let k3 = ConvGeometry::cubic(3, 1, 1);
        Ok(Self {
            conv1: Conv3d::new(&mut s, "conv1", cin, cout, k3, false)?,
            conv2: Conv3d::new(&mut s, "conv2", cout, cout, k3, false)?,
            skip: if cin == cout {
                None
            } else {
                Some(Conv3d::new(&mut s, "skip", cin, cout, ConvGeometry::cubic(1, 1, 0), false)?)
            },
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let eps = T::of(IN_EPS);
        let slope = T::of(LEAKY_SLOPE);
        let h = self.conv1.forward(p, x)?.instance_norm(eps)?.leaky_relu(slope)?;
        let h = self.conv2.forward(p, &h)?.instance_norm(eps)?;
        let residual = match &self.skip {
            Some(conv) => conv.forward(p, x)?.instance_norm(eps)?,
            None => x.clone(),
        };
        h.add(&residual)?.leaky_relu(slope)
    }
}

/// Transposed-convolution upsampling, skip concatenation, residual block.
#[derive(Clone, Debug)]
pub struct UpBlock {
    up: ConvTranspose3d,
    res: ResBlock,
}

impl UpBlock {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        stride: [usize; 3],
    ) -> Result<Self> {
        let mut s = b.sub(name);
        Ok(Self {
            up: ConvTranspose3d::upsampling(&mut s, "up", cin, cout, stride, false)?,
            res: ResBlock::new(&mut s, "res", 2 * cout, cout)?,
        })
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>, skip: &Tensor<T>) -> Result<Tensor<T>> {
        let up = self.up.forward(p, x)?;
        if up.shape() != skip.shape() {
            return Err(Error::shape("decoder skip", up.shape(), skip.shape()));
        }
        self.res.forward(p, &Tensor::concat(&[up, skip.clone()], 1)?)
    }
}

/// Skip connections that may be zeroed, for wiring checks.
///
/// Index 0 is the raw input level, 1 the embedding, 2..=5 the four stages
/// (5 is the bottleneck).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SkipMask(pub [bool; 6]);

/// CNN decoder over six resolution levels, ending at input resolution.
#[derive(Clone, Debug)]
pub struct Decoder {
    /// Processing blocks for input, embedding and stage 1-3 features.
    skips: Vec<ResBlock>,
    bottleneck: ResBlock,
    /// Upsampling from 1/32 back to full resolution.
    ups: Vec<UpBlock>,
}

impl Decoder {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, cfg: &UNetConfig) -> Result<Self> {
        let f = cfg.feature_size;
        let strides = cfg.strides();
        // Widths of levels 0..=5: input-level F, embedding F, then stage widths.
        let widths = [f, f, f, 2 * f, 4 * f, 8 * f];
        let inputs = [cfg.in_channels, f, f, 2 * f, 4 * f];
        let skips = (0..5)
            .map(|l| ResBlock::new(b, &format!("skip{l}"), inputs[l], widths[l]))
            .collect::<Result<_>>()?;
        let bottleneck = ResBlock::new(b, "bottleneck", widths[5], widths[5])?;
        let ups = (0..5)
            .rev()
            .map(|l| UpBlock::new(b, &format!("up{l}"), widths[l + 1], widths[l], strides[l]))
            .collect::<Result<_>>()?;
        Ok(Self { skips, bottleneck, ups })
    }

    /// Decoded features `(N, F, H, W, D)` at input resolution.
    pub fn forward<T: Scalar>(
        &self,
        p: &Bound<T>,
        x: &Tensor<T>,
        feats: &EncoderFeatures<T>,
        mask: SkipMask,
    ) -> Result<Tensor<T>> {
        let zeroed = |t: &Tensor<T>, level: usize| if mask.0[level] { t.scale(T::zero()) } else { Ok(t.clone()) };
        let sources = [x, &feats.embed, &feats.stages[0], &feats.stages[1], &feats.stages[2]];
        let mut processed = Vec::with_capacity(5);
        for (l, (block, src)) in self.skips.iter().zip(sources).enumerate() {
            processed.push(zeroed(&block.forward(p, src)?, l)?);
        }
        let mut h = zeroed(&self.bottleneck.forward(p, feats.bottleneck())?, 5)?;
        for (up, skip) in self.ups.iter().zip(processed.iter().rev()) {
            h = up.forward(p, &h, skip)?;
        }
        Ok(h)
    }
}
