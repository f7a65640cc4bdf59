use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatLayout, Scalar};
use crate::tensor::{Array, Tensor};

/// Kernel, stride and zero padding of a 3-D convolution, per spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

/// Output columns materialized per im2col chunk.
const CHUNK: usize = 4096;

impl ConvGeometry {
    pub fn cubic(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel: [kernel; 3],
            stride: [stride; 3],
            padding: [padding; 3],
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Spatial extent produced by a forward convolution over `input`.
    pub fn output_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = input[a] + 2 * self.padding[a];
            if self.stride[a] == 0 || self.kernel[a] == 0 || span < self.kernel[a] {
                return Err(Error::invalid(format!(
                    "convolution {self:?} does not fit input extent {input:?}"
                )));
            }
            out[a] = (span - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    /// Spatial extent produced by a transposed convolution over `input`.
    pub fn transposed_extent(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (input[a] - 1) * self.stride[a] + self.kernel[a];
            if self.stride[a] == 0 || full <= 2 * self.padding[a] {
                return Err(Error::invalid(format!(
                    "transposed convolution {self:?} does not fit input extent {input:?}"
                )));
            }
            out[a] = full - 2 * self.padding[a];
        }
        Ok(out)
    }
}

/// Pairing of a dense grid and the strided grid a kernel slides over it.
#[derive(Clone, Copy)]
struct Lowering {
    geom: ConvGeometry,
    dense: [usize; 3],
    coarse: [usize; 3],
}

impl Lowering {
    fn dense_len(&self) -> usize {
        self.dense.iter().product()
    }

    fn coarse_len(&self) -> usize {
        self.coarse.iter().product()
    }

    /// Output lines (runs along the innermost axis) per im2col chunk.
    fn lines_per_chunk(&self) -> usize {
        (CHUNK / self.coarse[2]).max(1)
    }

    /// Calls `f(row, line, src_offset, od_lo, od_hi)` for every kernel tap row
    /// and output line `l0..l0 + nl` whose tap lands inside the dense grid;
    /// `od_lo..od_hi` are the in-bounds positions along the innermost axis and
    /// `src_offset` is the dense offset of position `od = 0` (possibly
    /// negative).
    fn for_each_run(&self, channels: usize, l0: usize, nl: usize, mut f: impl FnMut(usize, usize, isize, usize, usize)) {
        let [kh, kw, kd] = self.geom.kernel;
        let [sh, sw, sd] = self.geom.stride;
        let [ph, pw, pd] = self.geom.padding.map(|p| p as isize);
        let [h, w, d] = self.dense;
        let [_, cw, cd] = self.coarse;
        let spatial = (h * w * d) as isize;
        let mut row = 0;
        for c in 0..channels as isize {
            for a in 0..kh as isize {
                for b in 0..kw as isize {
                    for e in 0..kd as isize {
                        // Innermost positions with 0 <= od*sd + e - pd < d.
                        let lo = if pd > e { (pd - e + sd as isize - 1) / sd as isize } else { 0 } as usize;
                        let last = d as isize - 1 + pd - e;
                        let hi = if last < 0 { 0 } else { ((last / sd as isize) as usize + 1).min(cd) };
                        if lo < hi {
                            for l in 0..nl {
                                let line = l0 + l;
                                let ih = ((line / cw) * sh) as isize + a - ph;
                                let iw = ((line % cw) * sw) as isize + b - pw;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                let src = c * spatial + (ih * w as isize + iw) * d as isize + e - pd;
                                f(row, l, src, lo, hi);
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], channels: usize, l0: usize, nl: usize, cols: &mut Vec<T>) {
        let cd = self.coarse[2];
        let sd = self.geom.stride[2];
        let pc = nl * cd;
        cols.clear();
        cols.resize(channels * self.geom.kernel_volume() * pc, T::zero());
        self.for_each_run(channels, l0, nl, |r, l, src, lo, hi| {
            let dst = &mut cols[r * pc + l * cd + lo..r * pc + l * cd + hi];
            let start = (src + (lo * sd) as isize) as usize;
            if sd == 1 {
                dst.copy_from_slice(&x[start..start + (hi - lo)]);
            } else {
                for (o, v) in dst.iter_mut().zip(x[start..].iter().step_by(sd)) {
                    *o = *v;
                }
            }
        });
    }

    fn col2im<T: Scalar>(&self, cols: &[T], channels: usize, l0: usize, nl: usize, x: &mut [T]) {
        let cd = self.coarse[2];
        let sd = self.geom.stride[2];
        let pc = nl * cd;
        self.for_each_run(channels, l0, nl, |r, l, src, lo, hi| {
            let from = &cols[r * pc + l * cd + lo..r * pc + l * cd + hi];
            let start = (src + (lo * sd) as isize) as usize;
            if sd == 1 {
                for (o, v) in x[start..start + (hi - lo)].iter_mut().zip(from) {
                    *o += *v;
                }
            } else {
                for (o, v) in x[start..].iter_mut().step_by(sd).zip(from) {
                    *o += *v;
                }
            }
        });
    }
}

/// Chunks of whole output lines: `(first line, line count, first position, position count)`.
fn chunks(low: &Lowering) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    let lines = low.coarse[0] * low.coarse[1];
    let (per, cd) = (low.lines_per_chunk(), low.coarse[2]);
    (0..lines).step_by(per).map(move |l0| {
        let nl = per.min(lines - l0);
        (l0, nl, l0 * cd, nl * cd)
    })
}

fn spatial_of(shape: &[usize]) -> [usize; 3] {
    [shape[2], shape[3], shape[4]]
}

/// `out[co, p] (+)= W[co, :] . cols[:, p]` for every chunk of coarse positions.
fn lowered_forward<T: Scalar>(
    low: &Lowering,
    x: &[T],
    cin: usize,
    wmat: &[T],
    cout: usize,
    out: &mut [T],
) {
    let pn = low.coarse_len();
    let k = cin * low.geom.kernel_volume();
    let mut cols = Vec::new();
    for (l0, nl, p0, pc) in chunks(low) {
        low.im2col(x, cin, l0, nl, &mut cols);
        gemm(
            T::one(),
            wmat,
            MatLayout::row_major(cout, k),
            &cols,
            MatLayout::row_major(k, pc),
            T::zero(),
            &mut out[p0..],
            MatLayout { rows: cout, cols: pc, rs: pn as isize, cs: 1 },
        );
    }
}

/// `dense += col2im(W^T . g)`, the adjoint of [`lowered_forward`] in `x`.
fn lowered_adjoint<T: Scalar>(
    low: &Lowering,
    g: &[T],
    cout: usize,
    wmat: &[T],
    cin: usize,
    dense: &mut [T],
) {
    let pn = low.coarse_len();
    let k = cin * low.geom.kernel_volume();
    let mut cols = vec![T::zero(); k * (low.lines_per_chunk() * low.coarse[2]).min(pn)];
    for (l0, nl, p0, pc) in chunks(low) {
        gemm(
            T::one(),
            wmat,
            MatLayout::row_major(cout, k).t(),
            &g[p0..],
            MatLayout { rows: cout, cols: pc, rs: pn as isize, cs: 1 },
            T::zero(),
            &mut cols[..k * pc],
            MatLayout::row_major(k, pc),
        );
        low.col2im(&cols[..k * pc], cin, l0, nl, dense);
    }
}

/// `dW += g . cols^T`, the weight gradient shared by both directions.
fn lowered_weight_grad<T: Scalar>(
    low: &Lowering,
    x: &[T],
    cin: usize,
    g: &[T],
    cout: usize,
    dw: &mut [T],
) {
    let pn = low.coarse_len();
    let k = cin * low.geom.kernel_volume();
    let mut cols = Vec::new();
    for (l0, nl, p0, pc) in chunks(low) {
        low.im2col(x, cin, l0, nl, &mut cols);
        gemm(
            T::one(),
            &g[p0..],
            MatLayout { rows: cout, cols: pc, rs: pn as isize, cs: 1 },
            &cols,
            MatLayout::row_major(k, pc).t(),
            T::one(),
            dw,
            MatLayout::row_major(cout, k),
        );
    }
}

fn channel_sums<T: Scalar>(g: &[T], batch: usize, channels: usize, spatial: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for n in 0..batch {
        for (c, acc) in out.iter_mut().enumerate() {
            let off = (n * channels + c) * spatial;
            *acc += g[off..off + spatial].iter().copied().sum::<T>();
        }
    }
    out
}

fn check_conv_operands<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
    in_axis: usize,
) -> Result<()> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 5 || ws.len() != 5 || ws[in_axis] != xs[1] || ws[2..] != geom.kernel[..] {
        return Err(Error::shape(op, xs, ws));
    }
    if let Some(b) = bias {
        let out_ch = ws[1 - in_axis];
        if b.shape() != [out_ch] {
            return Err(Error::shape(op, ws, b.shape()));
        }
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    /// 3-D convolution of `(N, Cin, H, W, D)` with weight `(Cout, Cin, kh, kw, kd)`.
    pub fn conv3d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, geom: ConvGeometry) -> Result<Tensor<T>> {
        check_conv_operands("conv3d", self, weight, bias, &geom, 1)?;
        let (batch, cin, cout) = (self.shape()[0], self.shape()[1], weight.shape()[0]);
        let dense = spatial_of(self.shape());
        let coarse = geom.output_extent(dense)?;
        let low = Lowering { geom, dense, coarse };
        let (din, dout) = (cin * low.dense_len(), cout * low.coarse_len());
        let mut out = vec![T::zero(); batch * dout];
        for n in 0..batch {
            lowered_forward(&low, &self.data()[n * din..], cin, weight.data(), cout, &mut out[n * dout..(n + 1) * dout]);
        }
        if let Some(b) = bias {
            let pn = low.coarse_len();
            for n in 0..batch {
                for (c, &bv) in b.data().iter().enumerate() {
                    for v in &mut out[(n * cout + c) * pn..(n * cout + c + 1) * pn] {
                        *v += bv;
                    }
                }
            }
        }
        let shape = vec![batch, cout, coarse[0], coarse[1], coarse[2]];
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Tensor::from_op("conv3d", Array::from_parts(shape, out), parents, move |ctx| {
            let (x, w, g) = (ctx.input(0), ctx.input(1), ctx.grad.data());
            let gx = ctx.wants(0).then(|| {
                let mut dx = vec![T::zero(); x.len()];
                for n in 0..batch {
                    lowered_adjoint(&low, &g[n * dout..], cout, w.data(), cin, &mut dx[n * din..(n + 1) * din]);
                }
                Array::from_parts(x.shape().to_vec(), dx)
            });
            let gw = ctx.wants(1).then(|| {
                let mut dw = vec![T::zero(); w.len()];
                for n in 0..batch {
                    lowered_weight_grad(&low, &x.data()[n * din..], cin, &g[n * dout..], cout, &mut dw);
                }
                Array::from_parts(w.shape().to_vec(), dw)
            });
            let mut grads = vec![gx, gw];
            if ctx.parents.len() == 3 {
                grads.push(ctx.wants(2).then(|| {
                    Array::from_parts(vec![cout], channel_sums(g, batch, cout, low.coarse_len()))
                }));
            }
            grads
        })
    }

    /// Transposed 3-D convolution of `(N, Cin, H, W, D)` with weight
    /// `(Cin, Cout, kh, kw, kd)`; the adjoint of [`Tensor::conv3d`] in its input.
    pub fn conv_transpose3d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        geom: ConvGeometry,
    ) -> Result<Tensor<T>> {
        check_conv_operands("conv_transpose3d", self, weight, bias, &geom, 0)?;
        let (batch, cin, cout) = (self.shape()[0], self.shape()[1], weight.shape()[1]);
        let coarse = spatial_of(self.shape());
        let dense = geom.transposed_extent(coarse)?;
        let low = Lowering { geom, dense, coarse };
        let (din, dout) = (cin * low.coarse_len(), cout * low.dense_len());
        let mut out = vec![T::zero(); batch * dout];
        for n in 0..batch {
            lowered_adjoint(&low, &self.data()[n * din..], cin, weight.data(), cout, &mut out[n * dout..(n + 1) * dout]);
        }
        if let Some(b) = bias {
            let pn = low.dense_len();
            for n in 0..batch {
                for (c, &bv) in b.data().iter().enumerate() {
                    for v in &mut out[(n * cout + c) * pn..(n * cout + c + 1) * pn] {
                        *v += bv;
                    }
                }
            }
        }
        let shape = vec![batch, cout, dense[0], dense[1], dense[2]];
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Tensor::from_op("conv_transpose3d", Array::from_parts(shape, out), parents, move |ctx| {
            let (x, w, g) = (ctx.input(0), ctx.input(1), ctx.grad.data());
            let gx = ctx.wants(0).then(|| {
                let mut dx = vec![T::zero(); x.len()];
                for n in 0..batch {
                    lowered_forward(&low, &g[n * dout..], cout, w.data(), cin, &mut dx[n * din..(n + 1) * din]);
                }
                Array::from_parts(x.shape().to_vec(), dx)
            });
            let gw = ctx.wants(1).then(|| {
                let mut dw = vec![T::zero(); w.len()];
                for n in 0..batch {
                    lowered_weight_grad(&low, &g[n * dout..], cout, &x.data()[n * din..], cin, &mut dw);
                }
                Array::from_parts(w.shape().to_vec(), dw)
            });
            let mut grads = vec![gx, gw];
            if ctx.parents.len() == 3 {
                grads.push(ctx.wants(2).then(|| {
                    Array::from_parts(vec![cout], channel_sums(g, batch, cout, low.dense_len()))
                }));
            }
            grads
        })
    }
}

/// Direct seven-loop convolution, used as an independent check of
/// [`Tensor::conv3d`].
pub fn conv3d_reference<T: Scalar>(
    x: &Array<T>,
    weight: &Array<T>,
    bias: Option<&Array<T>>,
    geom: ConvGeometry,
) -> Result<Array<T>> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 5 || ws.len() != 5 || ws[1] != xs[1] {
        return Err(Error::shape("conv3d_reference", xs, ws));
    }
    let [oh, ow, od] = geom.output_extent([xs[2], xs[3], xs[4]])?;
    let (batch, cin, cout) = (xs[0], xs[1], ws[0]);
    let mut out = Array::zeros(&[batch, cout, oh, ow, od]);
    let pad = geom.padding.map(|p| p as isize);
    for n in 0..batch {
        for co in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    for l in 0..od {
                        let mut acc = bias.map_or(T::zero(), |b| b.data()[co]);
                        for ci in 0..cin {
                            for a in 0..geom.kernel[0] {
                                for b in 0..geom.kernel[1] {
                                    for e in 0..geom.kernel[2] {
                                        let y = (i * geom.stride[0] + a) as isize - pad[0];
                                        let z = (j * geom.stride[1] + b) as isize - pad[1];
                                        let u = (l * geom.stride[2] + e) as isize - pad[2];
                                        if y < 0 || z < 0 || u < 0 {
                                            continue;
                                        }
                                        let (y, z, u) = (y as usize, z as usize, u as usize);
                                        if y >= xs[2] || z >= xs[3] || u >= xs[4] {
                                            continue;
                                        }
                                        acc += x.at(&[n, ci, y, z, u]) * weight.at(&[co, ci, a, b, e]);
                                    }
                                }
                            }
                        }
                        let off = out.offset(&[n, co, i, j, l]);
                        out.data_mut()[off] = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}
