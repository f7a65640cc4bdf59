//! Central finite-difference verification of reverse-mode gradients.

mod suite;

pub use suite::{run_suite, suite_names, SuiteConfig, SuiteEntry, SUITE_TOLERANCE};

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Elements checked per tensor; smaller tensors are checked exhaustively.
    /// Values below 32 are raised to 32.
    pub sample: Option<usize>,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            sample: None,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Set when the objective was non-finite at a perturbed point.
    pub non_finite: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| if p.non_finite { f64::INFINITY } else { p.max_rel_err })
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }
}

fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate<F>(store: &ParamStore<f64>, f: &F) -> Option<f64>
where
    F: Fn(&Bound<f64>) -> Result<Tensor<f64>>,
{
    match f(&store.bind_frozen()) {
        Ok(t) if t.numel() == 1 && t.item().is_finite() => Some(t.item()),
        _ => None,
    }
}

/// Compares analytic gradients of the scalar `f` against central differences
/// `(f(θ+eps) − f(θ−eps)) / 2eps` for every parameter of `store`.
pub fn grad_check<F>(store: &mut ParamStore<f64>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Bound<f64>) -> Result<Tensor<f64>>,
{
    let bound = store.bind();
    let out = f(&bound)?;
    if out.numel() != 1 {
        return Err(Error::NonScalarBackward(out.shape().to_vec()));
    }
    if !out.item().is_finite() {
        return Err(Error::NonFinite { op: "grad_check objective" });
    }
    out.backward()?;
    let analytic = bound.grads();
    drop(bound);

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let len = store.get(id).len();
        let picks: Vec<usize> = match cfg.sample {
            Some(k) if len > k.max(32) => {
                let mut r = rng::named_rng(cfg.seed, store.name(id));
                sample(&mut r, len, k.max(32)).into_vec()
            }
            _ => (0..len).collect(),
        };
        let mut check = ParamCheck {
            name: store.name(id).to_owned(),
            checked: picks.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            non_finite: false,
        };
        for i in picks {
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g.data()[i]);
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + cfg.eps;
            let plus = evaluate(store, &f);
            store.get_mut(id).data_mut()[i] = orig - cfg.eps;
            let minus = evaluate(store, &f);
            store.get_mut(id).data_mut()[i] = orig;
            let (Some(p), Some(m)) = (plus, minus) else {
                check.non_finite = true;
                continue;
            };
            let n = (p - m) / (2.0 * cfg.eps);
            check.max_abs_err = check.max_abs_err.max((a - n).abs());
            check.max_rel_err = check.max_rel_err.max(relative_error(a, n, cfg.floor));
        }
        report.params.push(check);
    }
    Ok(report)
}

/// Cheaper variant for large networks: per tensor, compares the analytic
/// directional derivative `∇f · v` along one seeded Gaussian direction `v`
/// with the central difference `(f(θ+eps·v) − f(θ−eps·v)) / 2eps`.
pub fn directional_check<F>(store: &mut ParamStore<f64>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Bound<f64>) -> Result<Tensor<f64>>,
{
    let bound = store.bind();
    let out = f(&bound)?;
    if out.numel() != 1 {
        return Err(Error::NonScalarBackward(out.shape().to_vec()));
    }
    if !out.item().is_finite() {
        return Err(Error::NonFinite { op: "grad_check objective" });
    }
    out.backward()?;
    let analytic = bound.grads();
    drop(bound);

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let mut r = rng::named_rng(cfg.seed, store.name(id));
        let orig = store.get(id).clone();
        let dir: Vec<f64> = (0..orig.len()).map(|_| StandardNormal.sample(&mut r)).collect();
        let a: f64 = analytic[id.index()]
            .as_ref()
            .map_or(0.0, |g| g.data().iter().zip(&dir).map(|(g, v)| g * v).sum());
        let shifted = |sign: f64| orig.data().iter().zip(&dir).map(|(x, v)| x + sign * cfg.eps * v).collect::<Vec<f64>>();
        store.get_mut(id).data_mut().copy_from_slice(&shifted(1.0));
        let plus = evaluate(store, &f);
        store.get_mut(id).data_mut().copy_from_slice(&shifted(-1.0));
        let minus = evaluate(store, &f);
        store.set(id, orig)?;
        let mut check = ParamCheck {
            name: store.name(id).to_owned(),
            checked: 1,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            non_finite: false,
        };
        match (plus, minus) {
            (Some(p), Some(m)) => {
                let n = (p - m) / (2.0 * cfg.eps);
                check.max_abs_err = (a - n).abs();
                check.max_rel_err = relative_error(a, n, cfg.floor);
            }
            _ => check.non_finite = true,
        }
        report.params.push(check);
    }
    Ok(report)
}
