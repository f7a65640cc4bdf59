use crate::error::{Error, Result};
use crate::scalar::{gemm, MatLayout, Scalar};
use crate::tensor::{Array, Tensor};

/// Batch count, M, K, N for `a @ b`, plus whether `b` is a shared 2-D matrix.
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, bool)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return Err(Error::shape("matmul", a, b));
    }
    if b.len() == 2 {
        let rows: usize = a[..a.len() - 1].iter().product();
        return Ok((1, rows, k, n, true));
    }
    if a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] {
        return Err(Error::shape("matmul", a, b));
    }
    Ok((a[..a.len() - 2].iter().product(), m, k, n, false))
}

impl<T: Scalar> Tensor<T> {
    /// Matrix product over the last two axes.
    ///
    /// `other` is either a 2-D matrix shared by every leading position of
    /// `self`, or carries the same leading (batch) axes as `self`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, m, k, n, shared) = matmul_dims(self.shape(), other.shape())?;
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); batch * m * n];
        let (ad, bd) = (self.data(), other.data());
        for bi in 0..batch {
            gemm(
                T::one(),
                &ad[bi * m * k..],
                MatLayout::row_major(m, k),
                &bd[bi * k * n..],
                MatLayout::row_major(k, n),
                T::zero(),
                &mut out[bi * m * n..(bi + 1) * m * n],
                MatLayout::row_major(m, n),
            );
        }
        let value = Array::from_parts(shape, out);
        Tensor::from_op("matmul", value, vec![self.clone(), other.clone()], move |ctx| {
            let (a, b, g) = (ctx.input(0), ctx.input(1), ctx.grad.data());
            let ga = ctx.wants(0).then(|| {
                let mut da = vec![T::zero(); a.len()];
                for bi in 0..batch {
                    let boff = if shared { 0 } else { bi * k * n };
                    gemm(
                        T::one(),
                        &g[bi * m * n..],
                        MatLayout::row_major(m, n),
                        &b.data()[boff..],
                        MatLayout::row_major(k, n).t(),
                        T::zero(),
                        &mut da[bi * m * k..(bi + 1) * m * k],
                        MatLayout::row_major(m, k),
                    );
                }
                Array::from_parts(a.shape().to_vec(), da)
            });
            let gb = ctx.wants(1).then(|| {
                let mut db = vec![T::zero(); b.len()];
                for bi in 0..batch {
                    let boff = if shared { 0 } else { bi * k * n };
                    let beta = if shared && bi > 0 { T::one() } else { T::zero() };
                    gemm(
                        T::one(),
                        &a.data()[bi * m * k..],
                        MatLayout::row_major(m, k).t(),
                        &g[bi * m * n..],
                        MatLayout::row_major(m, n),
                        beta,
                        &mut db[boff..boff + k * n],
                        MatLayout::row_major(k, n),
                    );
                }
                Array::from_parts(b.shape().to_vec(), db)
            });
            vec![ga, gb]
        })
    }

    /// Affine map over the last axis: `x @ weight + bias`, weight `(in, out)`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_leaves_matrix_unchanged() {
        let eye = Tensor::<f64>::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = Tensor::from_vec(&[3, 3], vec![1., -2., 3., 4., 5.5, 6., -7., 8., 9.]).unwrap();
        assert_eq!(eye.matmul(&a).unwrap().value(), a.value());
    }

    #[test]
    fn batched_product_matches_loops() {
        let a = Tensor::<f64>::from_vec(&[2, 2, 3], (0..12).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 3, 2], (0..12).map(|v| (v as f64) * 0.5 - 2.0).collect()).unwrap();
        let c = a.matmul(&b).unwrap();
        for bi in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let want: f64 = (0..3).map(|k| a.value().at(&[bi, i, k]) * b.value().at(&[bi, k, j])).sum();
                    assert!((c.value().at(&[bi, i, j]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn inner_mismatch_reports_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 5]);
        match a.matmul(&b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
