use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Array, Tensor};

use super::shape::split_at_axis;

/// Key validity for masked softmax over the last axis.
///
/// Row `r` of the logits (rows are all leading positions flattened) belongs to
/// group `r / rows_per_group`; `valid[group * n + j]` says whether key `j`
/// participates in that group's softmax.
#[derive(Clone, Debug)]
pub struct KeyMask {
    pub valid: Rc<[bool]>,
    pub rows_per_group: usize,
}

fn softmax_strided<T: Scalar>(x: &Array<T>, axis: usize, log: bool) -> Array<T> {
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..n {
                m = m.max(src[at(k)]);
            }
            let mut z = T::zero();
            for k in 0..n {
                let e = (src[at(k)] - m).exp();
                out[at(k)] = e;
                z += e;
            }
            if log {
                let lz = z.ln() + m;
                for k in 0..n {
                    out[at(k)] = src[at(k)] - lz;
                }
            } else {
                for k in 0..n {
                    out[at(k)] /= z;
                }
            }
        }
    }
    Array::from_parts(x.shape().to_vec(), out)
}

impl<T: Scalar> Tensor<T> {
    /// Softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::invalid(format!("softmax: axis {axis} out of range for {:?}", self.shape())));
        }
        let value = softmax_strided(self.value(), axis, false);
        Tensor::from_op("softmax", value, vec![self.clone()], move |ctx| {
            let (outer, n, inner) = split_at_axis(ctx.out.shape(), axis);
            let (y, g) = (ctx.out.data(), ctx.grad.data());
            let mut dx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: T = (0..n).map(|k| y[at(k)] * g[at(k)]).sum();
                    for k in 0..n {
                        dx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(Array::from_parts(ctx.out.shape().to_vec(), dx))]
        })
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::invalid(format!("log_softmax: axis {axis} out of range for {:?}", self.shape())));
        }
        let value = softmax_strided(self.value(), axis, true);
        Tensor::from_op("log_softmax", value, vec![self.clone()], move |ctx| {
            let (outer, n, inner) = split_at_axis(ctx.out.shape(), axis);
            let (y, g) = (ctx.out.data(), ctx.grad.data());
            let mut dx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let gs: T = (0..n).map(|k| g[at(k)]).sum();
                    for k in 0..n {
                        dx[at(k)] = g[at(k)] - y[at(k)].exp() * gs;
                    }
                }
            }
            vec![Some(Array::from_parts(ctx.out.shape().to_vec(), dx))]
        })
    }

    /// Softmax over the last axis with masked-out keys getting exactly zero
    /// weight. Rows whose keys are all masked produce zeros.
    pub fn softmax_last_masked(&self, mask: Option<&KeyMask>) -> Result<Tensor<T>> {
        let Some(mask) = mask else {
            return self.softmax(self.ndim().saturating_sub(1));
        };
        let n = *self.shape().last().ok_or_else(|| Error::invalid("softmax of a scalar"))?;
        let rows = self.numel() / n;
        if mask.rows_per_group == 0
            || rows % mask.rows_per_group != 0
            || mask.valid.len() != rows / mask.rows_per_group * n
        {
            return Err(Error::invalid(format!(
                "key mask of {} entries does not fit logits {:?}",
                mask.valid.len(),
                self.shape()
            )));
        }
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let keep = &mask.valid[(r / mask.rows_per_group) * n..][..n];
            let row = &src[r * n..(r + 1) * n];
            let m = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .fold(T::neg_infinity(), |m, (&v, _)| m.max(v));
            if m == T::neg_infinity() {
                continue;
            }
            let dst = &mut out[r * n..(r + 1) * n];
            let mut z = T::zero();
            for j in 0..n {
                if keep[j] {
                    dst[j] = (row[j] - m).exp();
                    z += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= z;
            }
        }
        let value = Array::from_parts(self.shape().to_vec(), out);
        Tensor::from_op("softmax_masked", value, vec![self.clone()], move |ctx| {
            let (y, g) = (ctx.out.data(), ctx.grad.data());
            let mut dx = vec![T::zero(); y.len()];
            for r in 0..rows {
                let (yr, gr) = (&y[r * n..(r + 1) * n], &g[r * n..(r + 1) * n]);
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    dx[r * n + j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(Array::from_parts(ctx.out.shape().to_vec(), dx))]
        })
    }
}
