//! Multi-head attention within windows, with cosine or dot-product logits.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::KeyMask;
use crate::tensor::Tensor;

/// Lower bound on the per-head temperature.
pub const TAU_MIN: f64 = 0.01;

/// How query/key similarity becomes a logit.
#[derive(Clone, Copy)]
pub enum Similarity<'a, T: Scalar> {
    /// `cos(q, k) / τ` with one τ per head, shape `(heads,)`.
    Cosine { tau: &'a Tensor<T> },
    /// `q·k / √d_k`.
    Dot,
}

/// Per-head temperature `max(exp(raw), TAU_MIN)`.
pub fn temperature<T: Scalar>(raw: &Tensor<T>) -> Result<Tensor<T>> {
    raw.exp()?.clamp_min(T::of(TAU_MIN))
}

fn check_qkv<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [_, h, n, dk] = *q.shape() else {
        return Err(Error::invalid(format!("attention expects (B, heads, n, d_k), got {:?}", q.shape())));
    };
    if k.shape() != q.shape() {
        return Err(Error::shape("attention keys", q.shape(), k.shape()));
    }
    if v.shape()[..3] != q.shape()[..3] {
        return Err(Error::shape("attention values", q.shape(), v.shape()));
    }
    Ok((h, n, dk))
}

/// Attention logits `(B, heads, n, n)` before the softmax. Zero-norm queries
/// or keys give a cosine of 0 for the affected pairs.
pub fn attention_logits<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    sim: Similarity<'_, T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (h, n, dk) = check_qkv(q, k, k)?;
    let logits = match sim {
        Similarity::Cosine { tau } => {
            if tau.shape() != [h] {
                return Err(Error::shape("attention temperature", tau.shape(), &[h]));
            }
            let cos = q.l2_normalize()?.matmul(&k.l2_normalize()?.transpose_last()?)?;
            cos.div(&tau.reshape(&[h, 1, 1])?)?
        }
        Similarity::Dot => q
            .matmul(&k.transpose_last()?)?
            .scale(T::of(1.0 / (dk as f64).sqrt()))?,
    };
    match bias {
        Some(b) if b.shape() != [h, n, n] => Err(Error::shape("attention bias", b.shape(), &[h, n, n])),
        Some(b) => logits.add(b),
        None => Ok(logits),
    }
}

/// `softmax(logits) · v` for q, k, v of shape `(B, heads, n, d_k)`. Returns
/// the attended values and the attention weights.
pub fn scaled_cosine_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    sim: Similarity<'_, T>,
    bias: Option<&Tensor<T>>,
    mask: Option<&KeyMask>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    check_qkv(q, k, v)?;
    let weights = attention_logits(q, k, sim, bias)?.softmax_last_masked(mask)?;
    Ok((weights.matmul(v)?, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Array;

    #[test]
    fn identical_query_and_key_give_inverse_temperature() {
        let q = Tensor::<f64>::from_vec(&[1, 1, 1, 3], vec![0.3, -2.0, 1.1]).unwrap();
        let tau = Tensor::from_vec(&[1], vec![0.25]).unwrap();
        let l = attention_logits(&q, &q, Similarity::Cosine { tau: &tau }, None).unwrap();
        assert!((l.item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_key_has_zero_cosine() {
        let q = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        let tau = Tensor::constant(Array::full(&[1], 0.5));
        let l = attention_logits(&q, &q, Similarity::Cosine { tau: &tau }, None).unwrap();
        assert_eq!(&l.data()[1..], &[0.0, 0.0, 0.0]);
    }
}
