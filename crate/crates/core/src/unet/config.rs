use serde::{Deserialize, Serialize};

use crate::attention::NormPlacement;
use crate::error::{Error, Result};

/// Number of stride-2 reductions between the input and the bottleneck.
pub const DOWNSAMPLINGS: usize = 5;

/// Architecture of a [`super::CSwinUNet`]; models are built for one input
/// spatial shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub in_channels: usize,
    /// Feature width `F` of the first stage; stage widths are F, 2F, 4F, 8F.
    pub feature_size: usize,
    pub depths: [usize; 4],
    pub heads: [usize; 4],
    pub stripe_widths: [usize; 4],
    /// Input extents `(H, W, D)`.
    pub input_shape: [usize; 3],
    /// Depth-axis stride of each of the five reductions. `None` means
    /// isotropic (all 2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_strides: Option<[usize; DOWNSAMPLINGS]>,
    pub use_cosine: bool,
    pub mlp_ratio: usize,
    #[serde(default)]
    pub norm: NormPlacement,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            feature_size: 48,
            depths: [1, 2, 4, 1],
            heads: [3, 6, 12, 24],
            stripe_widths: [1, 2, 5, 5],
            input_shape: [160, 160, 32],
            depth_strides: None,
            use_cosine: true,
            mlp_ratio: 4,
            norm: NormPlacement::Pre,
        }
    }
}

impl UNetConfig {
    /// A reduced model sized for CPU training on 32x32x16 phantoms.
    pub fn desk() -> Self {
        Self {
            feature_size: 12,
            depths: [1, 1, 1, 1],
            heads: [3, 3, 3, 3],
            input_shape: [32, 32, 16],
            depth_strides: Some(Self::auto_depth_strides(16)),
            mlp_ratio: 2,
            ..Self::default()
        }
    }

    /// Depth strides that halve the depth while it stays at least 1, then
    /// keep it: e.g. depth 16 gives (2, 2, 2, 2, 1).
    pub fn auto_depth_strides(depth: usize) -> [usize; DOWNSAMPLINGS] {
        let mut d = depth;
        let mut out = [1; DOWNSAMPLINGS];
        for s in &mut out {
            if d >= 2 && d % 2 == 0 {
                *s = 2;
                d /= 2;
            }
        }
        out
    }

    /// Per-axis stride of each reduction.
    pub fn strides(&self) -> [[usize; 3]; DOWNSAMPLINGS] {
        let depth = self.depth_strides.unwrap_or([2; DOWNSAMPLINGS]);
        std::array::from_fn(|i| [2, 2, depth[i]])
    }

    /// Spatial extents at every level: input, 1/2, 1/4, 1/8, 1/16, 1/32.
    pub fn extents(&self) -> [[usize; 3]; DOWNSAMPLINGS + 1] {
        let strides = self.strides();
        let mut out = [self.input_shape; DOWNSAMPLINGS + 1];
        for i in 0..DOWNSAMPLINGS {
            out[i + 1] = std::array::from_fn(|a| out[i][a] / strides[i][a]);
        }
        out
    }

    /// Token grid of stage `i` (0-based).
    pub fn stage_grid(&self, i: usize) -> [usize; 3] {
        self.extents()[i + 2]
    }

    pub fn stage_dim(&self, i: usize) -> usize {
        self.feature_size << i
    }

    pub fn bottleneck_dim(&self) -> usize {
        self.stage_dim(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.feature_size == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("channel counts and mlp ratio must be positive"));
        }
        if let Some(ds) = self.depth_strides {
            if ds.iter().any(|&s| s != 1 && s != 2) {
                return Err(Error::invalid(format!("depth strides must be 1 or 2, got {ds:?}")));
            }
        }
        let strides = self.strides();
        let required: [usize; 3] = std::array::from_fn(|a| strides.iter().map(|s| s[a]).product());
        if (0..3).any(|a| self.input_shape[a] == 0 || self.input_shape[a] % required[a] != 0) {
            return Err(Error::invalid(format!(
                "input extents {:?} must be positive multiples of {required:?}",
                self.input_shape
            )));
        }
        for i in 0..4 {
            if self.depths[i] == 0 {
                return Err(Error::invalid(format!("stage {} has no blocks", i + 1)));
            }
            let (dim, heads) = (self.stage_dim(i), self.heads[i]);
            if heads == 0 || heads % 3 != 0 || dim % heads != 0 {
                return Err(Error::invalid(format!(
                    "stage {}: {heads} heads must be a multiple of 3 dividing width {dim}",
                    i + 1
                )));
            }
            if self.stripe_widths[i] == 0 {
                return Err(Error::invalid(format!("stage {}: stripe width must be positive", i + 1)));
            }
        }
        Ok(())
    }
}
