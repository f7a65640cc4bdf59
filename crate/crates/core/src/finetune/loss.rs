//! Generalized dice + focal segmentation loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Array, Tensor};

/// Smoothing added to the dice numerator and denominator.
pub const DICE_SMOOTH: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiceFocal {
    /// Weight of the dice term; the focal term gets `1 − lambda`.
    pub lambda: f64,
    pub gamma: f64,
}

impl Default for DiceFocal {
    fn default() -> Self {
        Self { lambda: 0.5, gamma: 2.0 }
    }
}

impl DiceFocal {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    /// Loss from class logits `(N, K, spatial...)`.
    pub fn from_logits<T: Scalar>(&self, logits: &Tensor<T>, target: &Array<f32>) -> Result<Tensor<T>> {
        self.validate()?;
        let onehot = one_hot::<T>(logits.shape(), target)?;
        let probs = logits.softmax(1)?;
        let logp = logits.log_softmax(1)?;
        self.combine(&probs, &logp, &onehot)
    }

    /// Loss from class probabilities `(N, K, spatial...)`, normalized over K.
    pub fn from_probs<T: Scalar>(&self, probs: &Tensor<T>, target: &Array<f32>) -> Result<Tensor<T>> {
        self.validate()?;
        let onehot = one_hot::<T>(probs.shape(), target)?;
        let logp = probs.clamp_min(T::of(1e-12))?.ln()?;
        self.combine(probs, &logp, &onehot)
    }

    fn combine<T: Scalar>(&self, probs: &Tensor<T>, logp: &Tensor<T>, onehot: &Array<T>) -> Result<Tensor<T>> {
        let gdl = generalized_dice(probs, onehot)?;
        let focal = focal(logp, onehot, self.gamma)?;
        gdl.scale(T::of(self.lambda))?.add(&focal.scale(T::of(1.0 - self.lambda))?)
    }
}

/// Integer labels `(N, spatial...)` to a one-hot `(N, K, spatial...)` array.
fn one_hot<T: Scalar>(shape: &[usize], target: &Array<f32>) -> Result<Array<T>> {
    if shape.len() < 3 {
        return Err(Error::invalid(format!("segmentation output must be (N, K, ...), got {shape:?}")));
    }
    let (n, k) = (shape[0], shape[1]);
    let mut expect = vec![n];
    expect.extend_from_slice(&shape[2..]);
    if target.shape() != expect.as_slice() {
        return Err(Error::shape("dice_focal", shape, target.shape()));
    }
    let vox = target.len() / n.max(1);
    let mut out = vec![T::zero(); n * k * vox];
    for b in 0..n {
        for v in 0..vox {
            let t = target.data()[b * vox + v];
            let c = t.round();
            if !(c >= 0.0 && (c as usize) < k && (t - c).abs() < 1e-6) {
                return Err(Error::invalid(format!("target value {t} is not a class index below {k}")));
            }
            out[(b * k + c as usize) * vox + v] = T::one();
        }
    }
    Array::new(shape, out)
}

/// Class weights `1 / volume²` over the whole batch, normalized to sum to
/// one; classes absent from the batch take the largest present weight.
pub fn class_weights(onehot: &[f64], n: usize, k: usize) -> Vec<f64> {
    let vox = onehot.len() / (n * k);
    let vol: Vec<f64> = (0..k)
        .map(|c| (0..n).map(|b| onehot[(b * k + c) * vox..][..vox].iter().sum::<f64>()).sum())
        .collect();
    let raw: Vec<f64> = vol.iter().map(|&v| if v > 0.0 { 1.0 / (v * v) } else { f64::INFINITY }).collect();
    let max_finite = raw.iter().copied().filter(|w| w.is_finite()).fold(0.0, f64::max);
    let w: Vec<f64> = raw.iter().map(|&w| if w.is_finite() { w } else { max_finite }).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|&x| x / total).collect()
}

/// `1 − (2·Σ_c w_c·Σ p·t + s) / (Σ_c w_c·Σ (p + t) + s)`.
pub fn generalized_dice<T: Scalar>(probs: &Tensor<T>, onehot: &Array<T>) -> Result<Tensor<T>> {
    let s = probs.shape();
    let (n, k) = (s[0], s[1]);
    let vox = probs.numel() / (n * k);
    let oh64: Vec<f64> = onehot.data().iter().map(|v| v.to_f64().unwrap_or(0.0)).collect();
    let w = class_weights(&oh64, n, k);
    let w = Tensor::constant(Array::new(&[1, k, 1], w.iter().map(|&x| T::of(x)).collect())?);
    let p = probs.reshape(&[n, k, vox])?;
    let t = Tensor::constant(onehot.clone().reshaped(&[n, k, vox])?);
    let smooth = T::of(DICE_SMOOTH);
    let inter = p.mul(&t)?.mul(&w)?.sum()?.scale(T::of(2.0))?.add_scalar(smooth)?;
    let denom = p.add(&t)?.mul(&w)?.sum()?.add_scalar(smooth)?;
    inter.div(&denom)?.neg()?.add_scalar(T::one())
}

/// Mean over voxels of `−(1 − p_true)^γ · ln p_true`.
pub fn focal<T: Scalar>(logp: &Tensor<T>, onehot: &Array<T>, gamma: f64) -> Result<Tensor<T>> {
    let t = Tensor::constant(onehot.clone());
    let lp_true = logp.mul(&t)?.sum_axis(1, false)?;
    let ce = lp_true.neg()?;
    if gamma == 0.0 {
        return ce.mean();
    }
    let one_minus = lp_true.exp()?.neg()?.add_scalar(T::one())?;
    // A zero base has an infinite derivative for γ < 1.
    let base = if gamma < 1.0 { one_minus.clamp_min(T::of(1e-12))? } else { one_minus };
    base.powf(T::of(gamma))?.mul(&ce)?.mean()
}

/// Foreground soft dice `2·Σ p·t / (Σ p + Σ t)` from `(N, 2, ...)`
/// probabilities, pooled over the batch; `None` if both sums are zero.
pub fn soft_dice(probs: &Array<f32>, target: &Array<f32>) -> Option<f64> {
    let n = probs.shape()[0];
    let vox = target.len() / n;
    let (mut inter, mut sum) = (0.0, 0.0);
    for b in 0..n {
        let p = &probs.data()[(b * 2 + 1) * vox..(b * 2 + 2) * vox];
        let t = &target.data()[b * vox..(b + 1) * vox];
        for (&p, &t) in p.iter().zip(t) {
            inter += p as f64 * t as f64;
            sum += p as f64 + t as f64;
        }
    }
    (sum > 0.0).then(|| 2.0 * inter / sum)
}
