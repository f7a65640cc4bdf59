//! Encoder plus the three pretext heads and the loss coefficients.

use crate::error::Result;
use crate::nn::{Conv3d, ConvTranspose3d, Linear};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::ops::ConvGeometry;
use crate::tensor::Tensor;
use crate::unet::{CSwinEncoder, UNetConfig};

use super::losses::{awl_coefficients, awl_raw_for_unit};

/// Outputs of one forward pass over a batch of views.
#[derive(Clone, Debug)]
pub struct SslOutputs<T: Scalar> {
    /// `(B, embed_dim)` contrastive embeddings, not normalized.
    pub embedding: Tensor<T>,
    /// `(B, 4)` rotation logits.
    pub rotation: Tensor<T>,
    /// `(B, C, H, W, D)` reconstruction.
    pub reconstruction: Tensor<T>,
}

/// The contrastive embedding reads the globally pooled bottleneck; the
/// rotation classifier reads the flattened bottleneck so it keeps the
/// spatial layout; the restoration ladder upsamples the bottleneck back to
/// the input grid with one transposed convolution per reduction.
#[derive(Clone, Debug)]
pub struct SslModel {
    pub cfg: UNetConfig,
    pub encoder: CSwinEncoder,
    contrastive: Linear,
    rotation: Linear,
    ladder: Vec<ConvTranspose3d>,
    restore: Conv3d,
    awl: ParamId,
}

impl SslModel {
    /// Registers `encoder.*`, `heads.*` and `awl.raw`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &UNetConfig, embed_dim: usize) -> Result<Self> {
        let encoder = CSwinEncoder::new(&mut store.builder("encoder"), cfg)?;
        let mut b = store.builder("heads");
        let bottom = cfg.bottleneck_dim();
        let cells: usize = cfg.extents()[5].iter().product();
        let contrastive = Linear::new(&mut b, "contrastive", bottom, embed_dim)?;
        let rotation = Linear::new(&mut b, "rotation", bottom * cells, 4)?;
        let f = cfg.feature_size;
        let widths = [bottom, 4 * f, 2 * f, f, f, f];
        let strides = cfg.strides();
        let ladder = (0..5)
            .map(|i| {
                let name = format!("restore.up{}", i + 1);
                ConvTranspose3d::upsampling(&mut b, &name, widths[i], widths[i + 1], strides[4 - i], true)
            })
            .collect::<Result<Vec<_>>>()?;
        let restore = Conv3d::new(&mut b, "restore.out", f, cfg.in_channels, ConvGeometry::cubic(1, 1, 0), true)?;
        let awl = store.builder("awl").constant("raw", &[3], awl_raw_for_unit())?;
        Ok(Self { cfg: cfg.clone(), encoder, contrastive, rotation, ladder, restore, awl })
    }

    pub fn build<T: Scalar>(cfg: &UNetConfig, embed_dim: usize, seed: u64) -> Result<(ParamStore<T>, Self)> {
        let mut store = ParamStore::new(seed);
        let model = Self::new(&mut store, cfg, embed_dim)?;
        Ok((store, model))
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<SslOutputs<T>> {
        let feats = self.encoder.forward(p, x)?;
        let z = feats.bottleneck();
        let (b, c) = (z.shape()[0], z.shape()[1]);
        let cells = z.numel() / (b * c);
        let pooled = z.reshape(&[b, c, cells])?.mean_axis(2, false)?;
        let embedding = self.contrastive.forward(p, &pooled)?;
        let rotation = self.rotation.forward(p, &z.reshape(&[b, c * cells])?)?;
        let mut h = z.clone();
        for (i, up) in self.ladder.iter().enumerate() {
            h = up.forward(p, &h)?;
            if i + 1 < self.ladder.len() {
                h = h.gelu()?;
            }
        }
        let reconstruction = self.restore.forward(p, &h)?;
        Ok(SslOutputs { embedding, rotation, reconstruction })
    }

    /// Loss coefficients `c`, shape `(3,)`.
    pub fn coefficients<T: Scalar>(&self, p: &Bound<T>) -> Result<Tensor<T>> {
        awl_coefficients(p.get(self.awl))
    }
}
