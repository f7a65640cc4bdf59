//! Shared pieces of the training loops.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::named_rng;
use crate::scalar::Scalar;
use crate::tensor::{Array, Tensor};

/// Stacks equally shaped arrays along a new leading axis.
pub(crate) fn stack(parts: &[&Array<f32>]) -> Result<Array<f32>> {
    let first = parts.first().ok_or_else(|| Error::invalid("cannot stack an empty batch"))?;
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(parts.len() * first.len());
    for p in parts {
        if p.shape() != first.shape() {
            return Err(Error::shape("stack", first.shape(), p.shape()));
        }
        data.extend_from_slice(p.data());
    }
    Array::new(&shape, data)
}

/// Sample order for one epoch, a fixed function of `(seed, label, epoch)`.
pub(crate) fn epoch_order(n: usize, seed: u64, label: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut named_rng(seed, &format!("{label}/epoch{epoch}")));
    order
}

/// Turns a non-finite loss (or a non-finite intermediate) into
/// [`Error::Diverged`].
pub(crate) fn check_loss<T: Scalar>(step: usize, loss: Result<Tensor<T>>) -> Result<Tensor<T>> {
    match loss {
        Ok(l) if l.item().is_finite() => Ok(l),
        Ok(l) => Err(Error::Diverged { step, loss: l.item().to_f64().unwrap_or(f64::NAN) }),
        Err(Error::NonFinite { .. }) => Err(Error::Diverged { step, loss: f64::NAN }),
        Err(e) => Err(e),
    }
}

/// Non-finite gradients also count as divergence.
pub(crate) fn check_grads<T: Scalar>(step: usize, loss: f64, grads: &[Option<Array<T>>]) -> Result<()> {
    if grads.iter().flatten().all(Array::all_finite) {
        Ok(())
    } else {
        Err(Error::Diverged { step, loss })
    }
}
