use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Array, Tensor};

/// Rescales each contiguous row of length `row` to zero mean and unit variance.
fn standardize_rows<T: Scalar>(x: &Tensor<T>, row: usize, eps: T, op: &'static str) -> Result<Tensor<T>> {
    let rows = x.numel() / row;
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    let mut inv_std = vec![T::zero(); rows];
    let n = T::of(row as f64);
    for r in 0..rows {
        let v = &src[r * row..(r + 1) * row];
        let mean = v.iter().copied().sum::<T>() / n;
        let var = v.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
        let s = (var + eps).sqrt().recip();
        inv_std[r] = s;
        for (o, &a) in out[r * row..(r + 1) * row].iter_mut().zip(v) {
            *o = (a - mean) * s;
        }
    }
    let value = Array::from_parts(x.shape().to_vec(), out);
    Tensor::from_op(op, value, vec![x.clone()], move |ctx| {
        let (y, g) = (ctx.out.data(), ctx.grad.data());
        let mut dx = vec![T::zero(); y.len()];
        for r in 0..rows {
            let (yr, gr) = (&y[r * row..(r + 1) * row], &g[r * row..(r + 1) * row]);
            let gm = gr.iter().copied().sum::<T>() / n;
            let gy = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / n;
            for j in 0..row {
                dx[r * row + j] = inv_std[r] * (gr[j] - gm - yr[j] * gy);
            }
        }
        vec![Some(Array::from_parts(ctx.out.shape().to_vec(), dx))]
    })
}

impl<T: Scalar> Tensor<T> {
    /// Instance normalization of `(N, C, spatial...)` without affine terms.
    pub fn instance_norm(&self, eps: T) -> Result<Tensor<T>> {
        if self.ndim() < 3 {
            return Err(Error::invalid(format!("instance_norm needs (N, C, ...), got {:?}", self.shape())));
        }
        let spatial: usize = self.shape()[2..].iter().product();
        standardize_rows(self, spatial, eps, "instance_norm")
    }

    /// Layer normalization over the last axis with elementwise affine.
    pub fn layer_norm(&self, weight: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let c = *self.shape().last().ok_or_else(|| Error::invalid("layer_norm of a scalar"))?;
        if weight.shape() != [c] || bias.shape() != [c] {
            return Err(Error::shape("layer_norm", self.shape(), weight.shape()));
        }
        standardize_rows(self, c, eps, "layer_norm")?.mul(weight)?.add(bias)
    }

    /// Scales each vector along the last axis to unit L2 norm. Zero vectors
    /// map to zero vectors (and pass zero gradient).
    pub fn l2_normalize(&self) -> Result<Tensor<T>> {
        let c = *self.shape().last().ok_or_else(|| Error::invalid("l2_normalize of a scalar"))?;
        let rows = self.numel() / c;
        let src = self.data();
        let tiny = T::min_positive_value().sqrt();
        let mut inv = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let v = &src[r * c..(r + 1) * c];
            let norm = v.iter().map(|&a| a * a).sum::<T>().sqrt();
            if norm > tiny {
                inv[r] = norm.recip();
                for (o, &a) in out[r * c..(r + 1) * c].iter_mut().zip(v) {
                    *o = a * inv[r];
                }
            }
        }
        let value = Array::from_parts(self.shape().to_vec(), out);
        Tensor::from_op("l2_normalize", value, vec![self.clone()], move |ctx| {
            let (y, g) = (ctx.out.data(), ctx.grad.data());
            let mut dx = vec![T::zero(); y.len()];
            for r in 0..rows {
                if inv[r] == T::zero() {
                    continue;
                }
                let (yr, gr) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                let dot = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
                for j in 0..c {
                    dx[r * c + j] = (gr[j] - yr[j] * dot) * inv[r];
                }
            }
            vec![Some(Array::from_parts(ctx.out.shape().to_vec(), dx))]
        })
    }
}
