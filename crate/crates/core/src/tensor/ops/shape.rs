use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Array, Tensor};

pub(crate) fn permute_array<T: Scalar>(x: &Array<T>, perm: &[usize]) -> Array<T> {
    let inner_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| inner_strides[p]).collect();
    let mut out = vec![T::zero(); x.len()];
    let src = x.data();
    if out_shape.is_empty() {
        out[0] = src[0];
    } else {
        let nd = out_shape.len();
        let inner = out_shape[nd - 1];
        let step = src_strides[nd - 1];
        let mut idx = vec![0usize; nd];
        let mut base = 0usize;
        let mut o = 0;
        while o < out.len() {
            for j in 0..inner {
                out[o + j] = src[base + j * step];
            }
            o += inner;
            for d in (0..nd - 1).rev() {
                idx[d] += 1;
                base += src_strides[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                base -= src_strides[d] * out_shape[d];
                idx[d] = 0;
            }
        }
    }
    Array::from_parts(out_shape, out)
}

/// (outer, axis extent, inner) decomposition of `shape` around `axis`.
pub(crate) fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

pub(crate) fn narrow_array<T: Scalar>(x: &Array<T>, axis: usize, start: usize, len: usize) -> Array<T> {
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Array::from_parts(shape, out)
}

pub(crate) fn pad_array<T: Scalar>(x: &Array<T>, axis: usize, before: usize, after: usize) -> Array<T> {
    let (outer, n, inner) = split_at_axis(x.shape(), axis);
    let m = n + before + after;
    let mut shape = x.shape().to_vec();
    shape[axis] = m;
    let mut out = vec![T::zero(); outer * m * inner];
    for o in 0..outer {
        let dst = (o * m + before) * inner;
        out[dst..dst + n * inner].copy_from_slice(&x.data()[o * n * inner..(o + 1) * n * inner]);
    }
    Array::from_parts(shape, out)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(format!("{op}: axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        let value = self.value().clone().reshaped(shape)?;
        Tensor::from_op("reshape", value, vec![self.clone()], |ctx| {
            let back = ctx.grad.clone().reshaped(ctx.input(0).shape()).expect("reshape back");
            vec![Some(back)]
        })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(format!(
                "permute: {perm:?} is not a permutation of {nd} axes"
            )));
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let mut inverse = vec![0; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let value = permute_array(self.value(), perm);
        Tensor::from_op("permute", value, vec![self.clone()], move |ctx| {
            vec![Some(permute_array(ctx.grad, &inverse))]
        })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor<T>> {
        let nd = self.ndim();
        if nd < 2 {
            return Err(Error::invalid("transpose_last needs at least two axes"));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 1, nd - 2);
        self.permute(&perm)
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis("narrow", self.shape(), axis)?;
        let n = self.shape()[axis];
        if len == 0 || start + len > n {
            return Err(Error::invalid(format!(
                "narrow: range {start}..{} exceeds extent {n} on axis {axis}",
                start + len
            )));
        }
        if start == 0 && len == n {
            return Ok(self.clone());
        }
        let value = narrow_array(self.value(), axis, start, len);
        Tensor::from_op("narrow", value, vec![self.clone()], move |ctx| {
            vec![Some(pad_array(ctx.grad, axis, start, n - start - len))]
        })
    }

    /// Zero padding along `axis`.
    pub fn pad(&self, axis: usize, before: usize, after: usize) -> Result<Tensor<T>> {
        check_axis("pad", self.shape(), axis)?;
        if before == 0 && after == 0 {
            return Ok(self.clone());
        }
        let n = self.shape()[axis];
        let value = pad_array(self.value(), axis, before, after);
        Tensor::from_op("pad", value, vec![self.clone()], move |ctx| {
            vec![Some(narrow_array(ctx.grad, axis, before, n))]
        })
    }

    /// Splits `axis` into pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
        check_axis("split", self.shape(), axis)?;
        if sizes.iter().sum::<usize>() != self.shape()[axis] {
            return Err(Error::invalid(format!(
                "split: sizes {sizes:?} do not sum to extent {}",
                self.shape()[axis]
            )));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let t = self.narrow(axis, start, len);
                start += len;
                t
            })
            .collect()
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        check_axis("concat", first.shape(), axis)?;
        for p in &parts[1..] {
            let same = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = sizes.iter().sum();
        let (outer, _, inner) = split_at_axis(first.shape(), axis);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &n) in parts.iter().zip(&sizes) {
                out.extend_from_slice(&p.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let value = Array::from_parts(shape, out);
        Tensor::from_op("concat", value, parts.to_vec(), move |ctx| {
            let mut start = 0;
            sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let g = ctx.wants(i).then(|| narrow_array(ctx.grad, axis, start, n));
                    start += n;
                    g
                })
                .collect()
        })
    }

    /// Gathers entries of the last axis: `out[..., j] = x[..., index[j]]`.
    pub fn index_select_last(&self, index: Rc<[usize]>) -> Result<Tensor<T>> {
        let n = *self.shape().last().ok_or_else(|| Error::invalid("index_select on a scalar"))?;
        if index.is_empty() {
            return Err(Error::invalid("index_select with an empty index"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("index_select: index {bad} out of range {n}")));
        }
        let outer = self.numel() / n;
        let m = index.len();
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let src = self.data();
        let mut out = Vec::with_capacity(outer * m);
        for o in 0..outer {
            let row = &src[o * n..(o + 1) * n];
            out.extend(index.iter().map(|&i| row[i]));
        }
        let value = Array::from_parts(shape, out);
        Tensor::from_op("index_select", value, vec![self.clone()], move |ctx| {
            let mut g = vec![T::zero(); outer * n];
            let gd = ctx.grad.data();
            for o in 0..outer {
                for (j, &i) in index.iter().enumerate() {
                    g[o * n + i] += gd[o * m + j];
                }
            }
            vec![Some(Array::from_parts(ctx.input(0).shape().to_vec(), g))]
        })
    }
}
