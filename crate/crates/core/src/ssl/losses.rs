//! Pretext losses and the automatically weighted combination.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::KeyMask;
use crate::tensor::{Array, Tensor};

/// Added to `softplus(raw)` so every coefficient stays bounded away from 0.
pub const AWL_EPS: f64 = 0.05;

/// NT-Xent over `(2N, D)` embeddings whose positive pairs are rows
/// `(2i, 2i+1)`. Rows are L2-normalized here; similarities are divided by
/// `temperature`, and each anchor's softmax runs over every other row.
pub fn contrastive_loss<T: Scalar>(embeddings: &Tensor<T>, temperature: f64) -> Result<Tensor<T>> {
    let [rows, _] = embeddings.shape() else {
        return Err(Error::invalid(format!("contrastive loss expects (2N, D), got {:?}", embeddings.shape())));
    };
    let rows = *rows;
    if rows % 2 != 0 || rows < 4 {
        return Err(Error::invalid(format!("contrastive loss needs an even count of at least 4 rows (N >= 2 pairs), got {rows}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let z = embeddings.l2_normalize()?;
    let sim = z.matmul(&z.transpose_last()?)?.scale(T::of(1.0 / temperature))?;
    let valid: Vec<bool> = (0..rows * rows).map(|o| o / rows != o % rows).collect();
    let probs = sim.softmax_last_masked(Some(&KeyMask { valid: Rc::from(valid), rows_per_group: 1 }))?;
    let pick = Array::from_fn(&[rows, rows], |o| if o % rows == (o / rows) ^ 1 { T::one() } else { T::zero() });
    probs.mul(&Tensor::constant(pick))?.sum_axis(1, false)?.ln()?.mean()?.neg()
}

/// Mean absolute difference between a reconstruction and its target.
pub fn restoration_loss<T: Scalar>(reconstruction: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if reconstruction.shape() != target.shape() {
        return Err(Error::shape("restoration_loss", reconstruction.shape(), target.shape()));
    }
    reconstruction.sub(target)?.abs()?.mean()
}

/// Mean cross-entropy of `(B, 4)` rotation logits.
pub fn rotation_loss<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    if logits.shape().get(1) != Some(&4) {
        return Err(Error::invalid(format!("rotation logits must be (B, 4), got {:?}", logits.shape())));
    }
    logits.cross_entropy(labels)
}

/// `Σ l_t / (2 c_t²) + Σ ln(1 + c_t²)` for three scalar losses and
/// coefficients `c` of shape `(3,)`.
pub fn awl_combine<T: Scalar>(losses: [&Tensor<T>; 3], c: &Tensor<T>) -> Result<Tensor<T>> {
    if c.shape() != [3] {
        return Err(Error::invalid(format!("expected 3 coefficients, got shape {:?}", c.shape())));
    }
    let l = stack_scalars(losses)?;
    let c2 = c.square()?;
    let weighted = l.div(&c2.scale(T::of(2.0))?)?.sum()?;
    weighted.add(&c2.add_scalar(T::one())?.ln()?.sum()?)
}

/// Positive coefficients `softplus(raw) + AWL_EPS`.
pub fn awl_coefficients<T: Scalar>(raw: &Tensor<T>) -> Result<Tensor<T>> {
    raw.softplus()?.add_scalar(T::of(AWL_EPS))
}

/// The raw value at which a coefficient starts at exactly 1.
pub fn awl_raw_for_unit() -> f64 {
    (1.0 - AWL_EPS).exp_m1().ln()
}

/// Effective task weights `1 / (2 c_t²)`.
pub fn effective_weights(c: &[f64]) -> Vec<f64> {
    c.iter().map(|c| 0.5 / (c * c)).collect()
}

fn stack_scalars<T: Scalar>(losses: [&Tensor<T>; 3]) -> Result<Tensor<T>> {
    let parts = losses
        .iter()
        .map(|l| {
            if l.numel() != 1 {
                return Err(Error::invalid(format!("expected a scalar loss, got shape {:?}", l.shape())));
            }
            l.reshape(&[1])
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&parts, 0)
}
