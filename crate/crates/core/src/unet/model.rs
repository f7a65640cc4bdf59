use crate::error::Result;
use crate::nn::Conv3d;
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::ops::ConvGeometry;
use crate::tensor::{Array, Tensor};

use super::config::UNetConfig;
use super::decoder::{Decoder, SkipMask};
use super::encoder::{CSwinEncoder, EncoderFeatures};

pub const NUM_CLASSES: usize = 2;

/// CSwin encoder, CNN decoder and a 1x1x1 two-class head.
#[derive(Clone, Debug)]
pub struct CSwinUNet {
    pub cfg: UNetConfig,
    pub encoder: CSwinEncoder,
    decoder: Decoder,
    head: Conv3d,
}

impl CSwinUNet {
    /// Registers all parameters under `encoder.`, `decoder.` and `head.`.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &UNetConfig) -> Result<Self> {
        let encoder = CSwinEncoder::new(&mut store.builder("encoder"), cfg)?;
        let decoder = Decoder::new(&mut store.builder("decoder"), cfg)?;
        let head = Conv3d::new(
            &mut store.builder(""),
            "head",
            cfg.feature_size,
            NUM_CLASSES,
            ConvGeometry::cubic(1, 1, 0),
            true,
        )?;
        Ok(Self { cfg: cfg.clone(), encoder, decoder, head })
    }

    /// A fresh parameter store seeded with `seed` and the model over it.
    pub fn build<T: Scalar>(cfg: &UNetConfig, seed: u64) -> Result<(ParamStore<T>, Self)> {
        let mut store = ParamStore::new(seed);
        let model = Self::new(&mut store, cfg)?;
        Ok((store, model))
    }

    pub fn encode<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<EncoderFeatures<T>> {
        self.encoder.forward(p, x)
    }

    /// Class logits `(N, 2, H, W, D)` from encoder features.
    pub fn decode<T: Scalar>(
        &self,
        p: &Bound<T>,
        x: &Tensor<T>,
        feats: &EncoderFeatures<T>,
        mask: SkipMask,
    ) -> Result<Tensor<T>> {
        self.head.forward(p, &self.decoder.forward(p, x, feats, mask)?)
    }

    pub fn logits<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.decode(p, x, &self.encode(p, x)?, SkipMask::default())
    }

    /// Per-voxel class probabilities `(N, 2, H, W, D)`.
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.logits(p, x)?.softmax(1)
    }

    /// Class-1 probability `(N, H, W, D)`.
    pub fn detection_map<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Array<T>> {
        let probs = self.forward(p, x)?;
        let s = probs.shape();
        let (n, vox) = (s[0], s[2] * s[3] * s[4]);
        let mut out = Vec::with_capacity(n * vox);
        for b in 0..n {
            out.extend_from_slice(&probs.data()[(b * NUM_CLASSES + 1) * vox..(b * NUM_CLASSES + 2) * vox]);
        }
        Array::new(&[n, s[2], s[3], s[4]], out)
    }
}
