//! Synthetic three-channel phantoms with ellipsoidal lesions.
//!
//! Each phantom has a body, an ellipsoidal gland and a dark tubular rectum
//! posterior to it (so in-plane orientation is recoverable), and zero or more
//! lesions placed inside the gland. Lesions are bright on the DWI-like
//! channel, dark on the ADC-like channel and mildly dark on T2.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{named_rng, Rng};
use crate::tensor::Array;

use super::volume::Volume;

pub const CHANNELS: [&str; 3] = ["T2W", "DWI", "ADC"];
pub const MASK_CHANNEL: &str = "lesion";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// Native `(H, W, D)` grid.
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Probability that a phantom has no lesion.
    pub negative_fraction: f64,
    pub max_lesions: usize,
    /// Lesion semi-axis range in millimetres.
    pub lesion_radius_mm: [f64; 2],
    /// Multiplier on the lesion intensity contrast.
    pub contrast: f64,
    /// Additive Gaussian noise, relative to the channel's gland intensity.
    pub noise_std: f64,
    /// Peak relative amplitude of the multiplicative linear bias field.
    pub bias_field: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: [40, 40, 16],
            spacing_mm: [0.6, 0.6, 3.0],
            negative_fraction: 0.3,
            max_lesions: 2,
            lesion_radius_mm: [2.5, 5.0],
            contrast: 1.0,
            noise_std: 0.05,
            bias_field: 0.15,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&s| s < 4) {
            return Err(Error::invalid(format!("phantom shape {:?} must be at least 4 per axis", self.shape)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("phantom spacing must be positive"));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return Err(Error::invalid("negative_fraction must lie in [0, 1]"));
        }
        let [lo, hi] = self.lesion_radius_mm;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::invalid("lesion_radius_mm must be a positive [min, max] range"));
        }
        if self.noise_std < 0.0 || self.bias_field < 0.0 || self.bias_field >= 1.0 {
            return Err(Error::invalid("noise_std must be >= 0 and bias_field in [0, 1)"));
        }
        Ok(())
    }
}

/// Axis-aligned ellipsoid in voxel coordinates (voxel centers at integers).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.level(p) <= 1.0
    }

    fn level(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum()
    }

    /// Analytic volume in voxels.
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radii.iter().product::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub shape: Ellipsoid,
    /// Additive contrast per channel.
    pub contrast: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume,
    pub mask: Volume,
    pub lesions: Vec<Lesion>,
}

impl Phantom {
    pub fn label(&self) -> bool {
        !self.lesions.is_empty()
    }
}

/// Voxel-center coordinates of flat index `i` on a `(H, W, D)` grid.
fn voxel(i: usize, [_, w, d]: [usize; 3]) -> [f64; 3] {
    [i / (w * d), (i / d) % w, i % d].map(|v| v as f64)
}

fn place_lesions(cfg: &PhantomConfig, gland: &Ellipsoid, rng: &mut Rng) -> Vec<Lesion> {
    let count = rng.random_range(1..=cfg.max_lesions.max(1));
    let [lo, hi] = cfg.lesion_radius_mm;
    let mut lesions: Vec<Lesion> = Vec::new();
    for _ in 0..count {
        for _attempt in 0..50 {
            let radii: [f64; 3] = std::array::from_fn(|a| rng.random_range(lo..=hi) / cfg.spacing_mm[a]);
            let radii = radii.map(|r| r.max(0.75));
            // Center inside the gland core so most of the lesion is in the gland.
            let u: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
            let center: [f64; 3] = std::array::from_fn(|a| gland.center[a] + u[a] * gland.radii[a]);
            let cand = Ellipsoid { center, radii };
            if !gland.contains(center) {
                continue;
            }
            // Bounding spheres in millimetres must not touch.
            let apart = lesions.iter().all(|l| {
                let dist = (0..3)
                    .map(|a| ((l.shape.center[a] - center[a]) * cfg.spacing_mm[a]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let r = |e: &Ellipsoid| (0..3).map(|a| e.radii[a] * cfg.spacing_mm[a]).fold(0.0, f64::max);
                dist > r(&l.shape) + r(&cand) + 1.0
            });
            if apart {
                let k = cfg.contrast * rng.random_range(0.8..1.2);
                lesions.push(Lesion { shape: cand, contrast: [-0.25 * k, 0.7 * k, -0.6 * k] });
                break;
            }
        }
    }
    lesions
}

/// Generates phantom `index` of the set seeded by `seed`.
pub fn generate(cfg: &PhantomConfig, seed: u64, index: usize) -> Result<Phantom> {
    cfg.validate()?;
    let mut rng = named_rng(seed, &format!("phantom/{index}"));
    let dims = cfg.shape;
    let [h, w, d] = dims.map(|v| v as f64);
    let jitter = |rng: &mut Rng, s: f64| rng.random_range(-s..s);

    let body = Ellipsoid {
        center: [(h - 1.0) / 2.0, (w - 1.0) / 2.0, (d - 1.0) / 2.0],
        radii: [0.48 * h, 0.48 * w, 2.0 * d],
    };
    let gland = Ellipsoid {
        center: [
            0.42 * h + jitter(&mut rng, 0.04 * h),
            (w - 1.0) / 2.0 + jitter(&mut rng, 0.04 * w),
            (d - 1.0) / 2.0 + jitter(&mut rng, 0.05 * d),
        ],
        radii: [
            0.22 * h * rng.random_range(0.9..1.1),
            0.26 * w * rng.random_range(0.9..1.1),
            0.38 * d * rng.random_range(0.9..1.1),
        ],
    };
    // Rectum: a cylinder along the slice axis, posterior (larger H) to the gland.
    let rectum_center = [gland.center[0] + gland.radii[0] + 0.1 * h, gland.center[1]];
    let rectum_radius = 0.08 * h.min(w);

    let lesions = if rng.random_bool(cfg.negative_fraction) {
        Vec::new()
    } else {
        place_lesions(cfg, &gland, &mut rng)
    };

    // Linear bias field along a random in-plane direction.
    let theta = rng.random_range(0.0..2.0 * PI);
    let (bx, by) = (theta.cos(), theta.sin());

    // [T2, DWI, ADC] for background, body, gland, rectum.
    const BACKGROUND: [f64; 3] = [0.0, 0.0, 0.0];
    const BODY: [f64; 3] = [0.45, 0.25, 1.6];
    const GLAND: [f64; 3] = [0.7, 0.35, 1.4];
    const RECTUM: [f64; 3] = [0.1, 0.05, 0.3];

    let n = dims.iter().product::<usize>();
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("valid std");
    let mut data = vec![0f32; 3 * n];
    let mut mask = vec![0f32; n];
    for i in 0..n {
        let p = voxel(i, dims);
        let in_rectum = ((p[0] - rectum_center[0]).powi(2) + (p[1] - rectum_center[1]).powi(2)).sqrt()
            <= rectum_radius;
        let mut v = if in_rectum {
            RECTUM
        } else if gland.contains(p) {
            GLAND
        } else if body.contains(p) {
            BODY
        } else {
            BACKGROUND
        };
        for l in &lesions {
            if l.shape.contains(p) {
                mask[i] = 1.0;
                for c in 0..3 {
                    v[c] = (v[c] + l.contrast[c] * GLAND[c]).max(0.0);
                }
            }
        }
        let bias = 1.0
            + cfg.bias_field * ((p[0] / (h - 1.0) - 0.5) * 2.0 * bx + (p[1] / (w - 1.0) - 0.5) * 2.0 * by);
        for c in 0..3 {
            let e = if cfg.noise_std > 0.0 { noise.sample(&mut rng) * GLAND[c] } else { 0.0 };
            data[c * n + i] = (v[c] * bias + e) as f32;
        }
    }

    let channels = CHANNELS.iter().map(|s| s.to_string()).collect();
    let volume = Volume::new(Array::new(&[3, dims[0], dims[1], dims[2]], data)?, cfg.spacing_mm, channels)?;
    let mask = Volume::new(
        Array::new(&[1, dims[0], dims[1], dims[2]], mask)?,
        cfg.spacing_mm,
        vec![MASK_CHANNEL.to_string()],
    )?;
    Ok(Phantom { volume, mask, lesions })
}
