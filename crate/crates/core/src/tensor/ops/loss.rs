use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Array, Tensor};

impl<T: Scalar> Tensor<T> {
    /// Mean cross-entropy of `(B, K)` logits against integer labels.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor<T>> {
        let [b, k] = self.shape() else {
            return Err(Error::invalid(format!("cross_entropy expects (B, K) logits, got {:?}", self.shape())));
        };
        let (b, k) = (*b, *k);
        if labels.len() != b {
            return Err(Error::shape("cross_entropy", self.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let logp = self.log_softmax(1)?;
        let labels = labels.to_vec();
        let picked: Vec<T> = (0..b).map(|i| logp.data()[i * k + labels[i]]).collect();
        let value = Array::scalar(-picked.iter().copied().sum::<T>() / T::of(b as f64));
        Tensor::from_op("cross_entropy", value, vec![logp], move |ctx| {
            let scale = -ctx.grad.item() / T::of(b as f64);
            let mut g = vec![T::zero(); b * k];
            for (i, &l) in labels.iter().enumerate() {
                g[i * k + l] = scale;
            }
            vec![Some(Array::from_parts(vec![b, k], g))]
        })
    }

    /// Cosine similarity between matched rows along the last axis.
    pub fn cosine_similarity(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.shape() != other.shape() {
            return Err(Error::shape("cosine_similarity", self.shape(), other.shape()));
        }
        let last = self.ndim() - 1;
        self.l2_normalize()?.mul(&other.l2_normalize()?)?.sum_axis(last, false)
    }
}
