//! AdamW with a linear-warmup cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Array;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Decoupled-weight-decay Adam. Decay applies to tensors of rank ≥ 2 only.
pub struct AdamW<T: Scalar> {
    cfg: AdamWConfig,
    m: Vec<Array<T>>,
    v: Vec<Array<T>>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamWConfig) -> Self {
        let zeros = || store.ids().map(|id| Array::zeros(store.get(id).shape())).collect();
        Self { cfg, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update with learning rate `lr`; parameters without a gradient are
    /// left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Array<T>>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = &grads[id.index()] else { continue };
            let decay = if store.get(id).ndim() >= 2 { self.cfg.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = store.get_mut(id).data_mut();
            for (((p, m), v), &g) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                let gf = g.to_f64().unwrap_or(0.0);
                let mf = b1 * m.to_f64().unwrap_or(0.0) + (1.0 - b1) * gf;
                let vf = b2 * v.to_f64().unwrap_or(0.0) + (1.0 - b2) * gf * gf;
                *m = T::of(mf);
                *v = T::of(vf);
                let mut pf = p.to_f64().unwrap_or(0.0);
                pf -= lr * decay * pf;
                pf -= lr * (mf / c1) / ((vf / c2).sqrt() + self.cfg.eps);
                *p = T::of(pf);
            }
        }
    }
}

/// Linear warmup to `base_lr`, then cosine annealing to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarmupCosine {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl WarmupCosine {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
