//! Resampling to a common spacing, center crop, resize and intensity
//! normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Array;

use super::volume::Volume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub target_spacing_mm: [f64; 3],
    pub crop: [usize; 3],
    pub output_shape: [usize; 3],
    /// Channels normalized per scan to zero mean, unit variance.
    pub per_scan_channels: Vec<usize>,
    /// Channels normalized with the fixed constants below.
    pub global_channels: Vec<usize>,
    pub global_mean: f64,
    pub global_std: f64,
    /// Lower bound on the per-scan standard deviation.
    pub std_eps: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_spacing_mm: [0.5, 0.5, 3.6],
            crop: [144, 144, 16],
            output_shape: [160, 160, 32],
            per_scan_channels: vec![0, 1],
            global_channels: vec![2],
            global_mean: 1.0,
            global_std: 0.5,
            std_eps: 1e-6,
        }
    }
}

impl PreprocessConfig {
    /// Voxel spacing of the preprocessed grid.
    pub fn output_spacing(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.target_spacing_mm[a] * self.crop[a] as f64 / self.output_shape[a] as f64)
    }

    /// Geometry for desk-scale phantoms feeding a 32x32x16 model.
    pub fn desk() -> Self {
        Self {
            crop: [40, 40, 12],
            output_shape: [32, 32, 16],
            ..Self::default()
        }
    }
}

/// Keys cubic convolution kernel with a = -0.5.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Source taps `(index, weight)` for each output sample along one axis, with
/// output sample `i` centered at source coordinate `(i + 0.5)·ratio − 0.5`
/// and edges replicated.
fn taps(n_in: usize, n_out: usize, ratio: f64, nearest: bool) -> Vec<Vec<(usize, f64)>> {
    let clamp = |k: isize| k.clamp(0, n_in as isize - 1) as usize;
    (0..n_out)
        .map(|i| {
            let x = (i as f64 + 0.5) * ratio - 0.5;
            if nearest {
                return vec![(clamp(x.round() as isize), 1.0)];
            }
            let base = x.floor();
            let frac = x - base;
            if frac == 0.0 {
                return vec![(clamp(base as isize), 1.0)];
            }
            (-1..=2)
                .map(|o| (clamp(base as isize + o), keys(frac - o as f64)))
                .collect()
        })
        .collect()
}

/// Separable resampling of a `(C, H, W, D)` array along the three spatial
/// axes; `ratio[a]` is source samples per output sample.
fn resample_axes(x: &Array<f32>, out: [usize; 3], ratio: [f64; 3], nearest: bool) -> Array<f32> {
    let mut cur: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let mut shape: [usize; 4] = x.shape().try_into().expect("4-D");
    for axis in 0..3 {
        let n_in = shape[axis + 1];
        let taps = taps(n_in, out[axis], ratio[axis], nearest);
        let outer: usize = shape[..axis + 1].iter().product();
        let inner: usize = shape[axis + 2..].iter().product();
        let mut next = vec![0.0; outer * out[axis] * inner];
        for o in 0..outer {
            for (i, tap) in taps.iter().enumerate() {
                let dst = (o * out[axis] + i) * inner;
                for &(k, w) in tap {
                    let src = (o * n_in + k) * inner;
                    for j in 0..inner {
                        next[dst + j] += w * cur[src + j];
                    }
                }
            }
        }
        cur = next;
        shape[axis + 1] = out[axis];
    }
    Array::new(&shape, cur.into_iter().map(|v| v as f32).collect()).expect("resampled shape")
}

/// Resamples to `spacing`; extents scale by the spacing ratio (rounded).
pub fn resample(x: &Array<f32>, from: [f64; 3], to: [f64; 3], nearest: bool) -> Array<f32> {
    let s = &x.shape()[1..];
    let out: [usize; 3] = std::array::from_fn(|a| ((s[a] as f64 * from[a] / to[a]).round() as usize).max(1));
    let ratio: [f64; 3] = std::array::from_fn(|a| s[a] as f64 / out[a] as f64);
    resample_axes(x, out, ratio, nearest)
}

/// Resizes to exactly `out` samples per axis.
pub fn resize(x: &Array<f32>, out: [usize; 3], nearest: bool) -> Array<f32> {
    let s = &x.shape()[1..];
    let ratio: [f64; 3] = std::array::from_fn(|a| s[a] as f64 / out[a] as f64);
    resample_axes(x, out, ratio, nearest)
}

/// Center crop to `size`, zero-padding axes that are too small. Returns the
/// axes that needed padding.
pub fn center_crop(x: &Array<f32>, size: [usize; 3]) -> (Array<f32>, Vec<usize>) {
    let [c, h, w, d]: [usize; 4] = x.shape().try_into().expect("4-D");
    let src = [h, w, d];
    let padded: Vec<usize> = (0..3).filter(|&a| src[a] < size[a]).collect();
    // Offset of the output origin in source coordinates (may be negative).
    let off: [isize; 3] = std::array::from_fn(|a| (src[a] as isize - size[a] as isize).div_euclid(2));
    let out = Array::from_fn(&[c, size[0], size[1], size[2]], |i| {
        let z = i % size[2];
        let y = (i / size[2]) % size[1];
        let xx = (i / (size[2] * size[1])) % size[0];
        let ch = i / (size[0] * size[1] * size[2]);
        let p = [xx as isize + off[0], y as isize + off[1], z as isize + off[2]];
        if (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < src[a]) {
            x.at(&[ch, p[0] as usize, p[1] as usize, p[2] as usize])
        } else {
            0.0
        }
    });
    (out, padded)
}

fn z_score(values: &mut [f32], mean: f64, std: f64) {
    for v in values {
        *v = ((*v as f64 - mean) / std) as f32;
    }
}

fn mean_std(values: &[f32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Output of [`preprocess`].
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub volume: Volume,
    pub warnings: Vec<String>,
}

fn geometry(x: &Array<f32>, spacing: [f64; 3], cfg: &PreprocessConfig, nearest: bool) -> (Array<f32>, Vec<usize>) {
    let r = resample(x, spacing, cfg.target_spacing_mm, nearest);
    let (c, padded) = center_crop(&r, cfg.crop);
    (resize(&c, cfg.output_shape, nearest), padded)
}


/// Resample, crop, resize and normalize an image volume. A volume already
/// marked as preprocessed is returned unchanged.
pub fn preprocess(v: &Volume, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    if v.preprocessed {
        return Ok(Preprocessed { volume: v.clone(), warnings: Vec::new() });
    }
    let channels = v.channels.len();
    if let Some(&c) = cfg.per_scan_channels.iter().chain(&cfg.global_channels).find(|&&c| c >= channels) {
        return Err(Error::invalid(format!("normalization channel {c} out of range ({channels} channels)")));
    }
    if !(cfg.global_std > 0.0) {
        return Err(Error::invalid("global std must be positive"));
    }
    let (mut data, padded) = geometry(&v.data, v.spacing_mm, cfg, false);
    let mut warnings = Vec::new();
    if !padded.is_empty() {
        warnings.push(format!(
            "volume extents {:?} after resampling are smaller than the crop {:?} on axes {padded:?}; zero-padded",
            v.spatial(),
            cfg.crop
        ));
    }
    let n = data.len() / channels;
    for &c in &cfg.per_scan_channels {
        let ch = &mut data.data_mut()[c * n..(c + 1) * n];
        let (mean, std) = mean_std(ch);
        z_score(ch, mean, std.max(cfg.std_eps));
    }
    for &c in &cfg.global_channels {
        z_score(&mut data.data_mut()[c * n..(c + 1) * n], cfg.global_mean, cfg.global_std);
    }
    let mut volume = Volume::new(data, cfg.output_spacing(), v.channels.clone())?;
    volume.preprocessed = true;
    Ok(Preprocessed { volume, warnings })
}

/// The same geometric transform for a label volume, nearest-neighbour.
pub fn preprocess_mask(mask: &Volume, cfg: &PreprocessConfig) -> Result<Volume> {
    if mask.preprocessed {
        return Ok(mask.clone());
    }
    let (data, _) = geometry(&mask.data, mask.spacing_mm, cfg, true);
    let mut out = Volume::new(data, cfg.output_spacing(), mask.channels.clone())?;
    out.preprocessed = true;
    Ok(out)
}
