//! The cross-shaped window attention layer and its transformer block.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamBuilder, ParamId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::kernel::{scaled_cosine_attention, temperature, Similarity};
use super::stripes::{merge_stripes, partition_stripes, StripeAxis, StripeConfig};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const INIT_TAU: f64 = 0.1;

/// Where the layer norms sit relative to the residual branches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// `x + f(norm(x))`.
    #[default]
    Pre,
    /// `x + norm(f(x))`.
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub dim: usize,
    /// Total heads `G`, split evenly over the three stripe axes.
    pub heads: usize,
    pub sw: usize,
    pub grid: [usize; 3],
    pub use_cosine: bool,
    pub mlp_ratio: usize,
    pub norm: NormPlacement,
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.heads % 3 != 0 {
            return Err(Error::invalid(format!("head count {} is not a positive multiple of 3", self.heads)));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::invalid(format!("width {} is not divisible by {} heads", self.dim, self.heads)));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::invalid("mlp ratio must be positive"));
        }
        StripeConfig::new(self.sw, StripeAxis::Horizontal, self.grid).map(|_| ())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn heads_per_group(&self) -> usize {
        self.heads / 3
    }
}

/// Heads attending within one stripe family.
#[derive(Clone, Debug)]
pub struct HeadGroup {
    pub stripes: StripeConfig,
    pub tau: Option<ParamId>,
    pub bias: ParamId,
    index: Rc<[usize]>,
}

impl HeadGroup {
    /// Relative position bias `(heads, n, n)` gathered from the table.
    pub fn bias<T: Scalar>(&self, p: &Bound<T>) -> Result<Tensor<T>> {
        let table = p.get(self.bias);
        let n = self.stripes.tokens_per_window();
        table
            .index_select_last(self.index.clone())?
            .reshape(&[table.shape()[0], n, n])
    }
}

#[derive(Clone, Debug)]
pub struct CSwinBlock {
    pub cfg: BlockConfig,
    norm1: (ParamId, ParamId),
    qkv: (ParamId, ParamId),
    pub groups: [HeadGroup; 3],
    proj: (ParamId, ParamId),
    norm2: (ParamId, ParamId),
    fc1: (ParamId, ParamId),
    fc2: (ParamId, ParamId),
}

fn linear<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, fan_in: usize, fan_out: usize) -> Result<(ParamId, ParamId)> {
    let mut s = b.sub(name);
    Ok((s.normal("weight", &[fan_in, fan_out], INIT_STD)?, s.zeros("bias", &[fan_out])?))
}

fn layer_norm<T: Scalar>(b: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Result<(ParamId, ParamId)> {
    let mut s = b.sub(name);
    Ok((s.constant("weight", &[dim], 1.0)?, s.zeros("bias", &[dim])?))
}

fn apply<T: Scalar>(p: &Bound<T>, x: &Tensor<T>, (w, b): (ParamId, ParamId)) -> Result<Tensor<T>> {
    x.linear(p.get(w), Some(p.get(b)))
}

fn norm<T: Scalar>(p: &Bound<T>, x: &Tensor<T>, (w, b): (ParamId, ParamId)) -> Result<Tensor<T>> {
    x.layer_norm(p.get(w), p.get(b), T::of(LN_EPS))
}

/// Attention of one head group within its stripes.
///
/// `qkv` is `(N, H, W, D, 3·Cg)` laid out as `[q | k | v]`, each head-major;
/// the result is `(N, H, W, D, Cg)`.
pub fn stripe_self_attention<T: Scalar>(
    qkv: &Tensor<T>,
    stripes: StripeConfig,
    heads: usize,
    sim: Similarity<'_, T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let c3 = *qkv.shape().last().unwrap_or(&0);
    if c3 % (3 * heads) != 0 {
        return Err(Error::invalid(format!("qkv width {c3} does not split into 3 x {heads} heads")));
    }
    let dk = c3 / (3 * heads);
    let s = partition_stripes(qkv, stripes)?;
    let (b, n) = (s.windows.shape()[0], s.windows.shape()[1]);
    let parts = s
        .windows
        .reshape(&[b, n, 3, heads, dk])?
        .permute(&[2, 0, 3, 1, 4])?
        .split(0, &[1, 1, 1])?;
    let qkv: Vec<Tensor<T>> = parts
        .iter()
        .map(|t| t.reshape(&[b, heads, n, dk]))
        .collect::<Result<_>>()?;
    let mask = s.layout.key_mask(heads);
    let (out, _) = scaled_cosine_attention(&qkv[0], &qkv[1], &qkv[2], sim, bias, mask.as_ref())?;
    let out = out.permute(&[0, 2, 1, 3])?.reshape(&[b, n, heads * dk])?;
    merge_stripes(&out, &s.layout)
}

impl CSwinBlock {
    pub fn new<T: Scalar>(b: &mut ParamBuilder<'_, T>, cfg: BlockConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.dim;
        let hg = cfg.heads_per_group();
        let norm1 = layer_norm(b, "norm1", c)?;
        let qkv = linear(b, "qkv", c, 3 * c)?;
        let mut group = |axis: StripeAxis| -> Result<HeadGroup> {
            let stripes = StripeConfig::new(cfg.sw, axis, cfg.grid)?;
            let name = format!("attn_{}", ["h", "v", "l"][axis.index()]);
            let mut s = b.sub(&name);
            let tau = if cfg.use_cosine {
                Some(s.constant("log_tau", &[hg], INIT_TAU.ln())?)
            } else {
                None
            };
            let bias = s.normal("rel_bias", &[hg, stripes.relative_table_len()], INIT_STD)?;
            Ok(HeadGroup {
                stripes,
                tau,
                bias,
                index: stripes.relative_index(),
            })
        };
        let groups = [
            group(StripeAxis::Horizontal)?,
            group(StripeAxis::Vertical)?,
            group(StripeAxis::Longitudinal)?,
        ];
        let proj = linear(b, "proj", c, c)?;
        let norm2 = layer_norm(b, "norm2", c)?;
        let fc1 = linear(b, "fc1", c, cfg.mlp_ratio * c)?;
        let fc2 = linear(b, "fc2", cfg.mlp_ratio * c, c)?;
        Ok(Self { cfg, norm1, qkv, groups, proj, norm2, fc1, fc2 })
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        match *x.shape() {
            [_, h, w, d, c] if [h, w, d] == self.cfg.grid && c == self.cfg.dim => Ok(()),
            _ => {
                let [h, w, d] = self.cfg.grid;
                Err(Error::shape("cswin block", x.shape(), &[h, w, d, self.cfg.dim]))
            }
        }
    }

    /// Cross-shaped window attention of `x: (N, H, W, D, C)`, output projected
    /// by `W_o`.
    pub fn attention<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let cg = self.cfg.dim / 3;
        let hg = self.cfg.heads_per_group();
        let qkv = apply(p, x, self.qkv)?;
        let mut outs = Vec::with_capacity(3);
        for (g, group) in self.groups.iter().enumerate() {
            let part = qkv.narrow(4, g * 3 * cg, 3 * cg)?;
            let tau = group.tau.map(|id| temperature(p.get(id))).transpose()?;
            let sim = match &tau {
                Some(tau) => Similarity::Cosine { tau },
                None => Similarity::Dot,
            };
            let bias = group.bias(p)?;
            outs.push(stripe_self_attention(&part, group.stripes, hg, sim, Some(&bias))?);
        }
        apply(p, &Tensor::concat(&outs, 4)?, self.proj)
    }

    fn mlp<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        apply(p, &apply(p, x, self.fc1)?.gelu()?, self.fc2)
    }

    /// Residual attention then residual MLP; the output has the input shape.
    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.cfg.norm {
            NormPlacement::Pre => {
                let x = x.add(&self.attention(p, &norm(p, x, self.norm1)?)?)?;
                x.add(&self.mlp(p, &norm(p, &x, self.norm2)?)?)
            }
            NormPlacement::Post => {
                let x = x.add(&norm(p, &self.attention(p, x)?, self.norm1)?)?;
                x.add(&norm(p, &self.mlp(p, &x)?, self.norm2)?)
            }
        }
    }
}
