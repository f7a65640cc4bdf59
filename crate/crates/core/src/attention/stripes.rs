//! Partitioning of a channels-last token grid `(N, H, W, D, F)` into
//! non-overlapping stripe windows and the exact inverse.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::KeyMask;
use crate::tensor::Tensor;

/// Axis a stripe family is cut along: horizontal stripes have width `sw`
/// along H and span W and D entirely, and so on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StripeAxis {
    Horizontal,
    Vertical,
    Longitudinal,
}

impl StripeAxis {
    pub const ALL: [StripeAxis; 3] = [StripeAxis::Horizontal, StripeAxis::Vertical, StripeAxis::Longitudinal];

    /// Spatial axis index in `(H, W, D)`.
    pub fn index(self) -> usize {
        match self {
            StripeAxis::Horizontal => 0,
            StripeAxis::Vertical => 1,
            StripeAxis::Longitudinal => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StripeConfig {
    pub sw: usize,
    pub axis: StripeAxis,
    pub grid: [usize; 3],
}

impl StripeConfig {
    pub fn new(sw: usize, axis: StripeAxis, grid: [usize; 3]) -> Result<Self> {
        if sw == 0 {
            return Err(Error::invalid("stripe width must be positive"));
        }
        if grid.contains(&0) {
            return Err(Error::invalid(format!("token grid extents must be positive, got {grid:?}")));
        }
        Ok(Self { sw, axis, grid })
    }

    /// Width actually used: a stripe never exceeds the axis extent.
    pub fn width(&self) -> usize {
        self.sw.min(self.grid[self.axis.index()])
    }

    /// Number of stripes `M`.
    pub fn count(&self) -> usize {
        self.grid[self.axis.index()].div_ceil(self.width())
    }

    pub fn padded_extent(&self) -> usize {
        self.count() * self.width()
    }

    /// Extents `(h, w, d)` of one window.
    pub fn window(&self) -> [usize; 3] {
        let mut w = self.grid;
        w[self.axis.index()] = self.width();
        w
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window().iter().product()
    }

    /// Row-major relative-offset index for every (query, key) pair of a
    /// window, into a table of `Π (2·extent − 1)` entries.
    pub fn relative_index(&self) -> Rc<[usize]> {
        let [e0, e1, e2] = self.window();
        let n = e0 * e1 * e2;
        let coord = |t: usize| [t / (e1 * e2), (t / e2) % e1, t % e2];
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            let a = coord(i);
            for j in 0..n {
                let b = coord(j);
                let d0 = a[0] + e0 - 1 - b[0];
                let d1 = a[1] + e1 - 1 - b[1];
                let d2 = a[2] + e2 - 1 - b[2];
                out.push((d0 * (2 * e1 - 1) + d1) * (2 * e2 - 1) + d2);
            }
        }
        out.into()
    }

    pub fn relative_table_len(&self) -> usize {
        self.window().iter().map(|&e| 2 * e - 1).product()
    }
}

/// Everything needed to undo a partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StripeLayout {
    pub cfg: StripeConfig,
    pub batch: usize,
    pub features: usize,
}

impl StripeLayout {
    pub fn pad(&self) -> usize {
        self.cfg.padded_extent() - self.cfg.grid[self.cfg.axis.index()]
    }

    /// Shape of a single stripe block, e.g. `(sw, W, D, F)` for horizontal.
    pub fn block_shape(&self) -> [usize; 4] {
        let [a, b, c] = self.cfg.window();
        [a, b, c, self.features]
    }

    /// Masks keys that fall into padding, or `None` when nothing was padded.
    pub fn key_mask(&self, heads: usize) -> Option<KeyMask> {
        if self.pad() == 0 {
            return None;
        }
        let ax = self.cfg.axis.index();
        let extent = self.cfg.grid[ax];
        let win = self.cfg.window();
        let (m, n) = (self.cfg.count(), self.cfg.tokens_per_window());
        let mut valid = Vec::with_capacity(self.batch * m * n);
        for _ in 0..self.batch {
            for s in 0..m {
                for t in 0..n {
                    let c = [t / (win[1] * win[2]), (t / win[2]) % win[1], t % win[2]];
                    valid.push(s * win[ax] + c[ax] < extent);
                }
            }
        }
        Some(KeyMask {
            valid: valid.into(),
            rows_per_group: heads * n,
        })
    }
}

/// Stripe windows stacked as `(N·M, tokens_per_window, F)`.
pub struct Stripes<T: Scalar> {
    pub windows: Tensor<T>,
    pub layout: StripeLayout,
}

impl<T: Scalar> Stripes<T> {
    /// Stripe `i` of batch element `b`, shaped as [`StripeLayout::block_shape`].
    pub fn block(&self, b: usize, i: usize) -> Result<Tensor<T>> {
        let idx = b * self.layout.cfg.count() + i;
        self.windows.narrow(0, idx, 1)?.reshape(&self.layout.block_shape())
    }
}

fn check_grid<T: Scalar>(t: &Tensor<T>, cfg: &StripeConfig) -> Result<(usize, usize)> {
    match *t.shape() {
        [n, h, w, d, f] if [h, w, d] == cfg.grid => Ok((n, f)),
        _ => Err(Error::shape("partition_stripes", t.shape(), &cfg.grid)),
    }
}

/// Splits `t` of shape `(N, H, W, D, F)` into `M` stripes along `cfg.axis`,
/// zero-padding the axis up to a multiple of the stripe width.
pub fn partition_stripes<T: Scalar>(t: &Tensor<T>, cfg: StripeConfig) -> Result<Stripes<T>> {
    let (n, f) = check_grid(t, &cfg)?;
    let layout = StripeLayout { cfg, batch: n, features: f };
    let ax = cfg.axis.index();
    let padded = t.pad(1 + ax, 0, layout.pad())?;
    let (m, sw) = (cfg.count(), cfg.width());
    // (N, H, W, D, F) with the stripe axis split into (M, sw), then M moved
    // next to the batch axis.
    let mut split = vec![n];
    for (i, &e) in cfg.grid.iter().enumerate() {
        if i == ax {
            split.extend([m, sw]);
        } else {
            split.push(e);
        }
    }
    split.push(f);
    let mut perm = vec![0, 1 + ax];
    perm.extend((1..6).filter(|&i| i != 1 + ax));
    let windows = padded
        .reshape(&split)?
        .permute(&perm)?
        .reshape(&[n * m, cfg.tokens_per_window(), f])?;
    Ok(Stripes { windows, layout })
}

/// Reassembles windows produced by [`partition_stripes`] (possibly with a
/// different feature width) and crops the padding.
pub fn merge_stripes<T: Scalar>(windows: &Tensor<T>, layout: &StripeLayout) -> Result<Tensor<T>> {
    let cfg = layout.cfg;
    let (n, m, sw, ax) = (layout.batch, cfg.count(), cfg.width(), cfg.axis.index());
    let f = match *windows.shape() {
        [b, t, f] if b == n * m && t == cfg.tokens_per_window() => f,
        _ => {
            return Err(Error::shape(
                "merge_stripes",
                windows.shape(),
                &[n * m, cfg.tokens_per_window()],
            ))
        }
    };
    let mut split = vec![n, m];
    for (i, &e) in cfg.grid.iter().enumerate() {
        split.push(if i == ax { sw } else { e });
    }
    split.push(f);
    // Inverse of the partition permutation.
    let mut perm = vec![0];
    for i in 0..3 {
        if i == ax {
            perm.extend([1, 2 + i]);
        } else {
            perm.push(2 + i);
        }
    }
    perm.push(5);
    let mut shape = vec![n];
    for (i, &e) in cfg.grid.iter().enumerate() {
        shape.push(if i == ax { cfg.padded_extent() } else { e });
    }
    shape.push(f);
    let merged = windows.reshape(&split)?.permute(&perm)?.reshape(&shape)?;
    if layout.pad() == 0 {
        Ok(merged)
    } else {
        merged.narrow(1 + ax, 0, cfg.grid[ax])
    }
}
