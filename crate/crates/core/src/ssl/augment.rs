//! Paired-view augmentation for pretraining.
//!
//! Each view is rotated by a multiple of 90° about the slice axis, then
//! intensity-transformed (gamma, optional in-plane blur) and multiplied by
//! a smooth bias field. That clean view is the restoration target. Finally
//! a cut-out box is zeroed and several patches have their voxels shuffled;
//! the mask records those corrupted voxels.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{named_rng, Rng};
use crate::tensor::Array;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Range of cut-out volume as a fraction of the image volume.
    pub cutout_ratio: [f64; 2],
    pub shuffle_patches: usize,
    /// Patch extent; clipped to the image where larger.
    pub patch: [usize; 3],
    pub gamma: [f64; 2],
    pub blur_probability: f64,
    /// In-plane Gaussian sigma range, in voxels.
    pub blur_sigma: [f64; 2],
    /// Largest coefficient of the log bias-field polynomial.
    pub bias_field: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            cutout_ratio: [0.10, 0.48],
            shuffle_patches: 14,
            patch: [12, 12, 4],
            gamma: [0.7, 1.5],
            blur_probability: 0.5,
            blur_sigma: [0.5, 1.0],
            bias_field: 0.3,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.cutout_ratio;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::invalid(format!("cutout_ratio must satisfy 0 <= lo <= hi < 1, got {:?}", self.cutout_ratio)));
        }
        if !(self.gamma[0] > 0.0 && self.gamma[0] <= self.gamma[1]) {
            return Err(Error::invalid("gamma range must be positive and ordered"));
        }
        if !(self.blur_sigma[0] > 0.0 && self.blur_sigma[0] <= self.blur_sigma[1]) {
            return Err(Error::invalid("blur_sigma range must be positive and ordered"));
        }
        if self.patch.contains(&0) {
            return Err(Error::invalid("patch extents must be positive"));
        }
        Ok(())
    }
}

/// One augmented view of a `(C, H, W, D)` image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub image: Array<f32>,
    /// The view before cut-out and shuffling.
    pub target: Array<f32>,
    /// `(H, W, D)` flags of corrupted voxels.
    pub mask: Vec<bool>,
    /// Quarter turns applied.
    pub rotation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub a: View,
    pub b: View,
}

fn dims(x: &Array<f32>) -> Result<[usize; 4]> {
    x.shape().try_into().map_err(|_| Error::invalid(format!("expected (C, H, W, D), got {:?}", x.shape())))
}

/// Rotates by `k` quarter turns in the (H, W) plane. Requires H = W.
pub fn rotate90(x: &Array<f32>, k: usize) -> Result<Array<f32>> {
    let [c, h, w, d] = dims(x)?;
    if h != w {
        return Err(Error::invalid(format!("rotation needs a square in-plane grid, got {h}x{w}")));
    }
    let mut cur = x.clone();
    for _ in 0..k % 4 {
        // out[i][j] = in[j][n−1−i]
        let src = cur.data();
        let out = (0..c * h * w * d)
            .map(|o| {
                let z = o % d;
                let j = (o / d) % w;
                let i = (o / (d * w)) % h;
                let ch = o / (d * w * h);
                src[((ch * h + j) * w + (w - 1 - i)) * d + z]
            })
            .collect();
        cur = Array::new(x.shape(), out)?;
    }
    Ok(cur)
}

fn gamma_adjust(x: &mut Array<f32>, c: usize, gamma: f64) {
    let n = x.len() / c;
    for ch in x.data_mut().chunks_mut(n) {
        let lo = ch.iter().copied().fold(f32::INFINITY, f32::min) as f64;
        let hi = ch.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        if hi - lo <= 0.0 {
            continue;
        }
        for v in ch {
            let u = (*v as f64 - lo) / (hi - lo);
            *v = (lo + (hi - lo) * u.powf(gamma)) as f32;
        }
    }
}

/// Separable Gaussian blur along H and W with replicated edges.
fn blur_in_plane(x: &mut Array<f32>, [c, h, w, d]: [usize; 4], sigma: f64) {
    let radius = (2.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius).map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    for (axis, n, stride) in [(1usize, h, w * d), (2, w, d)] {
        let src = x.data().to_vec();
        let dst = x.data_mut();
        for o in 0..c * h * w * d {
            let pos = if axis == 1 { (o / (w * d)) % h } else { (o / d) % w };
            let base = o - pos * stride;
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                let q = (pos as isize + t as isize - radius).clamp(0, n as isize - 1) as usize;
                acc += k * src[base + q * stride] as f64;
            }
            dst[o] = acc as f32;
        }
    }
}

/// Multiplies by `exp(Σ a_t·φ_t)` over linear and quadratic terms of the
/// normalized coordinates.
fn bias_field(x: &mut Array<f32>, [c, h, w, d]: [usize; 4], scale: f64, rng: &mut Rng) {
    if scale <= 0.0 {
        return;
    }
    let a: [f64; 7] = std::array::from_fn(|_| rng.random_range(-scale..=scale));
    let norm = |i: usize, n: usize| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 };
    let n = h * w * d;
    let field: Vec<f32> = (0..n)
        .map(|o| {
            let (u, v, z) = (norm(o / (w * d), h), norm((o / d) % w, w), norm(o % d, d));
            (a[0] * u + a[1] * v + a[2] * z + a[3] * u * u + a[4] * v * v + a[5] * u * v + a[6] * z * z).exp() as f32
        })
        .collect();
    for ch in 0..c {
        for (v, f) in x.data_mut()[ch * n..(ch + 1) * n].iter_mut().zip(&field) {
            *v *= f;
        }
    }
}

/// Box `(start, extent)` whose volume fraction lies in `[lo, hi]` whenever
/// one-voxel steps along the slice axis allow it.
pub fn cutout_box(grid: [usize; 3], ratio: [f64; 2], rng: &mut Rng) -> ([usize; 3], [usize; 3]) {
    let r = if ratio[1] > ratio[0] { rng.random_range(ratio[0]..=ratio[1]) } else { ratio[0] };
    let total = grid.iter().product::<usize>() as f64;
    let side = r.cbrt();
    let mut ext: [usize; 3] =
        std::array::from_fn(|a| ((grid[a] as f64 * side).round() as usize).clamp(1, grid[a]));
    let plane = (ext[0] * ext[1]) as f64;
    ext[2] = ((r * total / plane).round() as usize).clamp(1, grid[2]);
    let frac = |e: &[usize; 3]| e.iter().product::<usize>() as f64 / total;
    while frac(&ext) < ratio[0] && ext[2] < grid[2] {
        ext[2] += 1;
    }
    while frac(&ext) > ratio[1] && ext[2] > 1 {
        ext[2] -= 1;
    }
    let start = std::array::from_fn(|a| rng.random_range(0..=grid[a] - ext[a]));
    (start, ext)
}

fn for_box(grid: [usize; 3], start: [usize; 3], ext: [usize; 3], mut f: impl FnMut(usize)) {
    let [_, w, d] = grid;
    for i in start[0]..start[0] + ext[0] {
        for j in start[1]..start[1] + ext[1] {
            for k in start[2]..start[2] + ext[2] {
                f((i * w + j) * d + k);
            }
        }
    }
}

/// Permutes the voxels of one box, the same permutation in every channel.
pub fn shuffle_patch(x: &mut Array<f32>, start: [usize; 3], ext: [usize; 3], rng: &mut Rng) -> Vec<usize> {
    let [c, h, w, d] = dims(x).expect("4-D image");
    let mut idx = Vec::with_capacity(ext.iter().product());
    for_box([h, w, d], start, ext, |o| idx.push(o));
    let mut perm = idx.clone();
    perm.shuffle(rng);
    let n = h * w * d;
    for ch in 0..c {
        let vals: Vec<f32> = perm.iter().map(|&p| x.data()[ch * n + p]).collect();
        for (&o, v) in idx.iter().zip(vals) {
            x.data_mut()[ch * n + o] = v;
        }
    }
    idx
}

/// One view drawn with `rng`.
pub fn augment_view(x: &Array<f32>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<View> {
    let rotation = rng.random_range(0..4);
    augment_view_rotated(x, cfg, rotation, rng)
}

/// As [`augment_view`] with the number of quarter turns fixed.
pub fn augment_view_rotated(x: &Array<f32>, cfg: &AugmentConfig, rotation: usize, rng: &mut Rng) -> Result<View> {
    cfg.validate()?;
    let shape = dims(x)?;
    if !x.all_finite() {
        return Err(Error::invalid("augmentation input is not finite"));
    }
    let [c, h, w, d] = shape;
    let rotation = rotation % 4;
    let mut v = rotate90(x, rotation)?;
    gamma_adjust(&mut v, c, rng.random_range(cfg.gamma[0]..=cfg.gamma[1]));
    if rng.random_bool(cfg.blur_probability) {
        blur_in_plane(&mut v, shape, rng.random_range(cfg.blur_sigma[0]..=cfg.blur_sigma[1]));
    }
    bias_field(&mut v, shape, cfg.bias_field, rng);
    let target = v.clone();

    let grid = [h, w, d];
    let n = h * w * d;
    let mut mask = vec![false; n];
    let (start, ext) = cutout_box(grid, cfg.cutout_ratio, rng);
    for_box(grid, start, ext, |o| {
        mask[o] = true;
        for ch in 0..c {
            v.data_mut()[ch * n + o] = 0.0;
        }
    });
    let patch: [usize; 3] = std::array::from_fn(|a| cfg.patch[a].min(grid[a]));
    for _ in 0..cfg.shuffle_patches {
        let s = std::array::from_fn(|a| rng.random_range(0..=grid[a] - patch[a]));
        for o in shuffle_patch(&mut v, s, patch, rng) {
            mask[o] = true;
        }
    }
    Ok(View { image: v, target, mask, rotation })
}

/// Two independent views of `x`, a fixed function of `(x, seed)`.
pub fn augment(x: &Array<f32>, cfg: &AugmentConfig, seed: u64) -> Result<AugmentedPair> {
    Ok(AugmentedPair {
        a: augment_view(x, cfg, &mut named_rng(seed, "view/a"))?,
        b: augment_view(x, cfg, &mut named_rng(seed, "view/b"))?,
    })
}
