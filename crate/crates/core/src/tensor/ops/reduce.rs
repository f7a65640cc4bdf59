use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Array, Tensor};

use super::shape::split_at_axis;

impl<T: Scalar> Tensor<T> {
    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&self) -> Result<Tensor<T>> {
        let value = Array::scalar(self.value().sum());
        Tensor::from_op("sum", value, vec![self.clone()], |ctx| {
            vec![Some(Array::full(ctx.input(0).shape(), ctx.grad.item()))]
        })
    }

    pub fn mean(&self) -> Result<Tensor<T>> {
        let n = T::of(self.numel() as f64);
        self.sum()?.scale(n.recip())
    }

    /// Sum over one axis. With `keepdim` the axis stays with extent 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        if axis >= self.ndim() {
            return Err(Error::invalid(format!("sum_axis: axis {axis} out of range for {:?}", self.shape())));
        }
        let (outer, n, inner) = split_at_axis(self.shape(), axis);
        let src = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        let value = Array::from_parts(shape, out);
        Tensor::from_op("sum_axis", value, vec![self.clone()], move |ctx| {
            let g = ctx.grad.data();
            let mut back = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    back.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(Array::from_parts(ctx.input(0).shape().to_vec(), back))]
        })
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        let n = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::invalid(format!("mean_axis: axis {axis} out of range")))?;
        self.sum_axis(axis, keepdim)?.scale(T::of(n as f64).recip())
    }
}
