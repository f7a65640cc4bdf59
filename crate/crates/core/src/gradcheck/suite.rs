//! Seeded small instances of every layer and loss, each checked in f64.

use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attention::{scaled_cosine_attention, temperature, BlockConfig, CSwinBlock, NormPlacement, Similarity};
use crate::error::{Error, Result};
use crate::finetune::DiceFocal;
use crate::params::{Bound, ParamStore};
use crate::rng;
use crate::ssl::{awl_coefficients, awl_combine, contrastive_loss, restoration_loss, rotation_loss, SslModel};
use crate::tensor::{Array, Tensor};
use crate::unet::{CSwinUNet, UNetConfig};

use super::{grad_check, GradCheckConfig, GradCheckReport};

pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Elements sampled per tensor in the network-sized checks.
    pub sample: usize,
    /// Names of the checks to run; all when empty.
    pub only: Vec<String>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { seed: 0, eps: 1e-6, tolerance: SUITE_TOLERANCE, sample: 32, only: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: Option<String>,
    pub passed: bool,
    pub seconds: f64,
}

fn uniform(shape: &[usize], seed: u64, label: &str, scale: f64) -> Array<f64> {
    let mut r = rng::named_rng(seed, label);
    Array::from_fn(shape, |_| r.random_range(-scale..scale))
}

/// O(1) parameters, so that no branch sits at a degenerate initial point.
fn randomize(store: &mut ParamStore<f64>, seed: u64) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let fresh = uniform(store.get(id).shape(), seed, &format!("randomize/{}", store.name(id)), 0.5);
        store.set(id, fresh)?;
    }
    Ok(())
}

fn labels(n: usize, classes: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut r = rng::named_rng(seed, label);
    (0..n).map(|_| r.random_range(0..classes)).collect()
}

fn binary(shape: &[usize], seed: u64, label: &str) -> Array<f32> {
    let mut r = rng::named_rng(seed, label);
    Array::from_fn(shape, |_| if r.random_bool(0.3) { 1.0 } else { 0.0 })
}

/// A UNet whose depth axis is reduced once, so the whole network runs on a
/// `32 x 32 x 2` input.
fn small_unet() -> UNetConfig {
    UNetConfig {
        feature_size: 3,
        depths: [1, 1, 1, 1],
        heads: [3, 3, 3, 3],
        input_shape: [32, 32, 2],
        depth_strides: Some([2, 1, 1, 1, 1]),
        mlp_ratio: 2,
        ..UNetConfig::default()
    }
}

struct Case {
    name: &'static str,
    run: Box<dyn Fn(&SuiteConfig) -> Result<GradCheckReport>>,
}

fn check<F>(store: &mut ParamStore<f64>, f: F, cfg: &SuiteConfig, sample: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&Bound<f64>) -> Result<Tensor<f64>>,
{
    grad_check(store, f, &GradCheckConfig { eps: cfg.eps, sample, seed: cfg.seed, ..GradCheckConfig::default() })
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "scaled cosine attention",
            run: Box::new(|cfg| {
                let s = cfg.seed;
                let mut store = ParamStore::new(s);
                let shape = [2, 3, 6, 2];
                let q = store.insert("q", uniform(&shape, s, "q", 1.0))?;
                let k = store.insert("k", uniform(&shape, s, "k", 1.0))?;
                let v = store.insert("v", uniform(&shape, s, "v", 1.0))?;
                let raw = store.insert("log_tau", uniform(&[3], s, "tau", 1.0))?;
                let bias = store.insert("bias", uniform(&[3, 6, 6], s, "bias", 1.0))?;
                let w = Tensor::constant(uniform(&shape, s, "w", 1.0));
                check(
                    &mut store,
                    |p| {
                        let tau = temperature(p.get(raw))?;
                        let sim = Similarity::Cosine { tau: &tau };
                        let (out, _) = scaled_cosine_attention(p.get(q), p.get(k), p.get(v), sim, Some(p.get(bias)), None)?;
                        out.mul(&w)?.sum()
                    },
                    cfg,
                    None,
                )
            }),
        },
        Case {
            name: "CSwin block",
            run: Box::new(|cfg| {
                let s = cfg.seed;
                let mut store = ParamStore::new(s);
                let bc = BlockConfig {
                    dim: 6,
                    heads: 3,
                    sw: 1,
                    grid: [4, 4, 2],
                    use_cosine: true,
                    mlp_ratio: 2,
                    norm: NormPlacement::Pre,
                };
                let block = CSwinBlock::new(&mut store.builder("block"), bc)?;
                randomize(&mut store, s)?;
                let x = store.insert("input", uniform(&[1, 4, 4, 2, 6], s, "x", 1.0))?;
                let w = Tensor::constant(uniform(&[1, 4, 4, 2, 6], s, "w", 1.0));
                check(&mut store, |p| block.forward(p, p.get(x))?.mul(&w)?.sum(), cfg, Some(cfg.sample))
            }),
        },
        Case {
            name: "encoder-decoder with dice-focal loss",
            run: Box::new(|cfg| {
                let s = cfg.seed;
                let ucfg = small_unet();
                let (mut store, model) = CSwinUNet::build::<f64>(&ucfg, s)?;
                randomize(&mut store, s)?;
                let x = Tensor::constant(uniform(&[1, 3, 32, 32, 2], s, "x", 1.0));
                let y = binary(&[1, 32, 32, 2], s, "y");
                let loss = DiceFocal::default();
                check(&mut store, |p| loss.from_logits(&model.logits(p, &x)?, &y), cfg, Some(cfg.sample))
            }),
        },
        Case {
            name: "pretext heads with weighted loss",
            run: Box::new(|cfg| {
                let s = cfg.seed;
                let ucfg = small_unet();
                let (mut store, model) = SslModel::build::<f64>(&ucfg, 8, s)?;
                randomize(&mut store, s)?;
                let x = Tensor::constant(uniform(&[4, 3, 32, 32, 2], s, "x", 1.0));
                let target = Tensor::constant(uniform(&[4, 3, 32, 32, 2], s, "target", 1.0));
                let rot = labels(4, 4, s, "rot");
                check(
                    &mut store,
                    |p| {
                        let out = model.forward(p, &x)?;
                        let l_cl = contrastive_loss(&out.embedding, 0.5)?;
                        let l_cr = restoration_loss(&out.reconstruction, &target)?;
                        let l_rot = rotation_loss(&out.rotation, &rot)?;
                        awl_combine([&l_cl, &l_cr, &l_rot], &model.coefficients(p)?)
                    },
                    cfg,
                    Some(cfg.sample),
                )
            }),
        },
        Case {
            name: "contrastive loss",
            run: Box::new(|cfg| {
                let mut store = ParamStore::new(cfg.seed);
                let z = store.insert("z", uniform(&[8, 6], cfg.seed, "z", 1.0))?;
                check(&mut store, |p| contrastive_loss(p.get(z), 0.5), cfg, None)
            }),
        },
        Case {
            name: "restoration loss",
            run: Box::new(|cfg| {
                let mut store = ParamStore::new(cfg.seed);
                let x = store.insert("x", uniform(&[2, 3, 4, 4, 2], cfg.seed, "x", 1.0))?;
                let t = Tensor::constant(uniform(&[2, 3, 4, 4, 2], cfg.seed, "t", 1.0));
                check(&mut store, |p| restoration_loss(p.get(x), &t), cfg, None)
            }),
        },
        Case {
            name: "rotation loss",
            run: Box::new(|cfg| {
                let mut store = ParamStore::new(cfg.seed);
                let z = store.insert("logits", uniform(&[6, 4], cfg.seed, "z", 2.0))?;
                let y = labels(6, 4, cfg.seed, "y");
                check(&mut store, |p| rotation_loss(p.get(z), &y), cfg, None)
            }),
        },
        Case {
            name: "automatic weighted loss",
            run: Box::new(|cfg| {
                let mut store = ParamStore::new(cfg.seed);
                let raw = store.insert("raw", uniform(&[3], cfg.seed, "raw", 1.0))?;
                let l = store.insert("losses", uniform(&[3], cfg.seed, "l", 1.0).map(|v| v.abs() + 0.1))?;
                check(
                    &mut store,
                    |p| {
                        let parts = p.get(l).split(0, &[1, 1, 1])?;
                        let s = parts.iter().map(|t| t.reshape(&[])).collect::<Result<Vec<_>>>()?;
                        awl_combine([&s[0], &s[1], &s[2]], &awl_coefficients(p.get(raw))?)
                    },
                    cfg,
                    None,
                )
            }),
        },
        Case {
            name: "dice-focal loss",
            run: Box::new(|cfg| {
                let mut store = ParamStore::new(cfg.seed);
                let z = store.insert("logits", uniform(&[2, 2, 3, 3, 2], cfg.seed, "z", 2.0))?;
                let y = binary(&[2, 3, 3, 2], cfg.seed, "y");
                check(&mut store, |p| DiceFocal::default().from_logits(p.get(z), &y), cfg, None)
            }),
        },
    ]
}

/// Names of all checks, in run order.
pub fn suite_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Runs every check and reports one entry per layer or loss.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteEntry>> {
    if let Some(bad) = cfg.only.iter().find(|n| !suite_names().contains(&n.as_str())) {
        return Err(Error::InvalidArgument(format!("unknown check {bad:?}; known: {:?}", suite_names())));
    }
    let mut out = Vec::new();
    for case in cases().into_iter().filter(|c| cfg.only.is_empty() || cfg.only.iter().any(|n| n == c.name)) {
        let start = Instant::now();
        let report = (case.run)(cfg)?;
        let max_rel_err = report.max_rel_err();
        out.push(SuiteEntry {
            name: case.name.to_owned(),
            checked: report.params.iter().map(|p| p.checked).sum(),
            max_rel_err,
            worst_param: report.worst().map(|w| w.name.clone()),
            passed: max_rel_err < cfg.tolerance,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}
