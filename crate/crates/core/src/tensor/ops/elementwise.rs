use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Array, Tensor};

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` aligned to `out`, zero along broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let pad = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < pad || shape[i - pad] == 1 {
                0
            } else {
                own[i - pad]
            }
        })
        .collect()
}

/// Visits every element of `out` with the matching offsets into two operands.
fn for_each_bcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total = numel(out);
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let nd = out.len();
    let inner = out[nd - 1];
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        for j in 0..inner {
            f(o + j, oa + j * ia, ob + j * ib);
        }
        o += inner;
        // Odometer over the outer axes.
        for d in (0..nd - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn broadcast_map<T: Scalar>(
    out_shape: &[usize],
    a: &Array<T>,
    b: &Array<T>,
    f: impl Fn(T, T) -> T,
) -> Array<T> {
    if a.shape() == out_shape && b.shape() == out_shape {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Array::from_parts(out_shape.to_vec(), data);
    }
    let sa = aligned_strides(a.shape(), out_shape);
    let sb = aligned_strides(b.shape(), out_shape);
    let mut data = vec![T::zero(); numel(out_shape)];
    let (ad, bd) = (a.data(), b.data());
    for_each_bcast(out_shape, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
    Array::from_parts(out_shape.to_vec(), data)
}

/// Sums `g` over the axes along which `shape` was broadcast.
pub(crate) fn reduce_to_shape<T: Scalar>(g: &Array<T>, shape: &[usize]) -> Array<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let st = aligned_strides(shape, g.shape());
    let zero = vec![0; g.ndim()];
    let mut out = vec![T::zero(); numel(shape)];
    let gd = g.data();
    for_each_bcast(g.shape(), &st, &zero, |o, t, _| out[t] += gd[o]);
    Array::from_parts(shape.to_vec(), out)
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Scalar> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, op: BinOp) -> Result<Tensor<T>> {
        let name = match op {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        };
        let out_shape = broadcast_shape(name, self.shape(), other.shape())?;
        let (a, b) = (self.value(), other.value());
        let value = match op {
            BinOp::Add => broadcast_map(&out_shape, a, b, |x, y| x + y),
            BinOp::Sub => broadcast_map(&out_shape, a, b, |x, y| x - y),
            BinOp::Mul => broadcast_map(&out_shape, a, b, |x, y| x * y),
            BinOp::Div => broadcast_map(&out_shape, a, b, |x, y| x / y),
        };
        Tensor::from_op(name, value, vec![self.clone(), other.clone()], move |ctx| {
            let (a, b, g) = (ctx.input(0), ctx.input(1), ctx.grad);
            let shape = g.shape();
            let ga = ctx.wants(0).then(|| match op {
                BinOp::Add | BinOp::Sub => reduce_to_shape(g, a.shape()),
                BinOp::Mul => reduce_to_shape(&broadcast_map(shape, g, b, |g, y| g * y), a.shape()),
                BinOp::Div => reduce_to_shape(&broadcast_map(shape, g, b, |g, y| g / y), a.shape()),
            });
            let gb = ctx.wants(1).then(|| match op {
                BinOp::Add => reduce_to_shape(g, b.shape()),
                BinOp::Sub => reduce_to_shape(&g.map(|v| -v), b.shape()),
                BinOp::Mul => reduce_to_shape(&broadcast_map(shape, g, a, |g, x| g * x), b.shape()),
                BinOp::Div => {
                    // d(a/b)/db = -out / b
                    let t = broadcast_map(shape, g, ctx.out, |g, o| -g * o);
                    reduce_to_shape(&broadcast_map(shape, &t, b, |t, y| t / y), b.shape())
                }
            });
            vec![ga, gb]
        })
    }

    /// Broadcasting `self + other`.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinOp::Div)
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    pub(crate) fn unary(
        &self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Tensor<T>> {
        let value = self.value().map(f);
        Tensor::from_op(op, value, vec![self.clone()], move |ctx| {
            let x = ctx.input(0).data();
            let y = ctx.out.data();
            let data = ctx
                .grad
                .data()
                .iter()
                .enumerate()
                .map(|(i, &g)| g * df(x[i], y[i]))
                .collect();
            vec![Some(Array::from_parts(ctx.grad.shape().to_vec(), data))]
        })
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.unary("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(&self, c: T) -> Result<Tensor<T>> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary("exp", T::exp, |_, y| y)
    }

    pub fn ln(&self) -> Result<Tensor<T>> {
        self.unary("ln", T::ln, |x, _| x.recip())
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        self.unary("sqrt", T::sqrt, |_, y| T::of(0.5) / y)
    }

    pub fn square(&self) -> Result<Tensor<T>> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    /// `x^p` for a constant exponent.
    pub fn powf(&self, p: T) -> Result<Tensor<T>> {
        self.unary("powf", move |x| x.powf(p), move |x, _| p * x.powf(p - T::one()))
    }

    pub fn abs(&self) -> Result<Tensor<T>> {
        self.unary("abs", T::abs, |x, _| {
            if x > T::zero() {
                T::one()
            } else if x < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Result<Tensor<T>> {
        self.unary(
            "softplus",
            |x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| sigmoid(x),
        )
    }

    pub fn leaky_relu(&self, slope: T) -> Result<Tensor<T>> {
        self.unary(
            "leaky_relu",
            move |x| if x > T::zero() { x } else { x * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Result<Tensor<T>> {
        let c = T::of((2.0 / std::f64::consts::PI).sqrt());
        let k = T::of(0.044715);
        let half = T::of(0.5);
        self.unary(
            "gelu",
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _| {
                let t = (c * (x + k * x * x * x)).tanh();
                half * (T::one() + t)
                    + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
            },
        )
    }

    /// `max(x, lo)`; the gradient is zero where the bound is active.
    pub fn clamp_min(&self, lo: T) -> Result<Tensor<T>> {
        self.unary(
            "clamp_min",
            move |x| x.max(lo),
            move |x, _| if x >= lo { T::one() } else { T::zero() },
        )
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::param(Array::new(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        let err = broadcast_shape("t", &[2, 3], &[4]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { ref lhs, ref rhs, .. } if lhs == &[2, 3] && rhs == &[4]));
    }

    #[test]
    fn bias_add_reduces_gradient() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = t(&[3], &[10., 20., 30.]);
        let y = x.add(&b).unwrap();
        assert_eq!(y.data(), &[11., 22., 33., 14., 25., 36.]);
        y.mul(&y).unwrap().sum().unwrap().backward().unwrap();
        let gb = b.grad().unwrap();
        assert_eq!(gb.data(), &[2. * (11. + 14.), 2. * (22. + 25.), 2. * (33. + 36.)]);
    }

    #[test]
    fn non_finite_is_rejected() {
        let x = t(&[2], &[0.0, 1.0]);
        assert!(matches!(x.ln(), Err(Error::NonFinite { op: "ln" })));
    }

    #[test]
    fn softplus_is_stable() {
        let x = t(&[3], &[-800.0, 0.0, 800.0]);
        let y = x.softplus().unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(y.data()[2], 800.0);
    }
}
