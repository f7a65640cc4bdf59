//! Supervised finetuning of the segmentation network.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig, WarmupCosine};
use crate::params::ParamStore;
use crate::ssl::checkpoint_model;
use crate::tensor::{Array, Tensor};
use crate::train::{check_grads, check_loss, epoch_order, stack};
use crate::unet::{CSwinUNet, Checkpoint, UNetConfig};

use super::loss::DiceFocal;

pub const CHECKPOINT_KIND: &str = "finetune";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    #[default]
    Random,
    /// Encoder weights from a pretraining checkpoint.
    Pretrained(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub model: UNetConfig,
    pub init: Init,
    pub loss: DiceFocal,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            model: UNetConfig::default(),
            init: Init::Random,
            loss: DiceFocal::default(),
            epochs: 150,
            batch_size: 2,
            lr: 1e-4,
            min_lr: 0.0,
            warmup_epochs: 10,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.min_lr >= 0.0) {
            return Err(Error::invalid("lr must be positive and min_lr non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_dice: Option<f64>,
}

#[derive(Debug)]
pub struct Finetuned {
    pub model: CSwinUNet,
    pub store: ParamStore<f32>,
    pub history: Vec<EpochRecord>,
}

impl Finetuned {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_store(CHECKPOINT_KIND, &self.model.cfg, &self.store)
    }

    /// Detection map `(H, W, D)` for one `(C, H, W, D)` image.
    pub fn predict(&self, image: &Array<f32>) -> Result<Array<f32>> {
        predict(&self.model, &self.store, image)
    }
}

pub fn predict(model: &CSwinUNet, store: &ParamStore<f32>, image: &Array<f32>) -> Result<Array<f32>> {
    let x = Tensor::constant(stack(&[image])?);
    let map = model.detection_map(&store.bind_frozen(), &x)?;
    let shape = map.shape()[1..].to_vec();
    map.reshaped(&shape)
}

fn masks<'a>(batch: &[&'a Sample]) -> Result<Vec<&'a Array<f32>>> {
    batch
        .iter()
        .map(|s| s.mask.as_ref().ok_or_else(|| Error::invalid(format!("case {} has no mask", s.id))))
        .collect()
}

/// Builds the model, applies the configured initialization and returns it
/// with a fresh parameter store.
pub fn init_model(cfg: &FinetuneConfig) -> Result<(ParamStore<f32>, CSwinUNet)> {
    let (mut store, model) = CSwinUNet::build::<f32>(&cfg.model, cfg.seed)?;
    if let Init::Pretrained(path) = &cfg.init {
        let ckpt = Checkpoint::load(path)?;
        let recorded = checkpoint_model(&ckpt)?;
        if recorded != cfg.model {
            return Err(Error::ArchitectureMismatch(config_diff(&recorded, &cfg.model)?));
        }
        ckpt.restore_prefix(&mut store, "encoder.")?;
    }
    Ok((store, model))
}

/// Top-level fields on which two architectures differ.
fn config_diff(a: &UNetConfig, b: &UNetConfig) -> Result<Vec<String>> {
    let (a, b) = (serde_json::to_value(a)?, serde_json::to_value(b)?);
    let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
        return Ok(vec!["config".into()]);
    };
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    Ok(keys.into_iter().filter(|k| a.get(*k) != b.get(*k)).map(|k| format!("config.{k}")).collect())
}

/// Mean loss and pooled foreground soft dice over `samples`.
pub fn validate(
    model: &CSwinUNet,
    store: &ParamStore<f32>,
    samples: &[Sample],
    cfg: &FinetuneConfig,
) -> Result<(Option<f64>, Option<f64>)> {
    if samples.is_empty() {
        return Ok((None, None));
    }
    let p = store.bind_frozen();
    let (mut loss, mut inter, mut sum) = (0.0, 0.0, 0.0);
    for chunk in samples.chunks(cfg.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let x = Tensor::constant(stack(&refs.iter().map(|s| &s.image).collect::<Vec<_>>())?);
        let y = stack(&masks(&refs)?)?;
        let logits = model.logits(&p, &x)?;
        loss += cfg.loss.from_logits(&logits, &y)?.item() as f64 * chunk.len() as f64;
        let probs = logits.softmax(1)?;
        let vox = y.len() / chunk.len();
        for b in 0..chunk.len() {
            let fg = &probs.data()[(2 * b + 1) * vox..(2 * b + 2) * vox];
            for (&q, &t) in fg.iter().zip(&y.data()[b * vox..(b + 1) * vox]) {
                inter += q as f64 * t as f64;
                sum += q as f64 + t as f64;
            }
        }
    }
    let dice = (sum > 0.0).then(|| 2.0 * inter / sum);
    Ok((Some(loss / samples.len() as f64), dice))
}

pub fn finetune(train: &[Sample], val: &[Sample], cfg: &FinetuneConfig) -> Result<Finetuned> {
    finetune_with(train, val, cfg, |_| {})
}

/// Trains with per-epoch validation, calling `on_epoch` after each epoch.
pub fn finetune_with(
    train: &[Sample],
    val: &[Sample],
    cfg: &FinetuneConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Finetuned> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("finetuning needs at least one training case"));
    }
    let (mut store, model) = init_model(cfg)?;
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let schedule = WarmupCosine {
        base_lr: cfg.lr,
        min_lr: cfg.min_lr,
        warmup_steps: cfg.warmup_epochs * steps_per_epoch,
        total_steps: cfg.epochs * steps_per_epoch,
    };
    let mut opt = AdamW::new(&store, cfg.optimizer);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, "finetune", epoch);
        let mut total = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let x = Tensor::constant(stack(&batch.iter().map(|s| &s.image).collect::<Vec<_>>())?);
            let y = stack(&masks(&batch)?)?;
            let p = store.bind();
            let loss = check_loss(step, model.logits(&p, &x).and_then(|l| cfg.loss.from_logits(&l, &y)))?;
            loss.backward()?;
            let grads = p.grads();
            let value = loss.item() as f64;
            check_grads(step, value, &grads)?;
            opt.step(&mut store, &grads, schedule.lr(step));
            total += value * batch.len() as f64;
            step += 1;
        }
        let (val_loss, val_dice) = validate(&model, &store, val, cfg)?;
        let record = EpochRecord { epoch: epoch + 1, train_loss: total / train.len() as f64, val_loss, val_dice };
        on_epoch(&record);
        history.push(record);
    }
    Ok(Finetuned { model, store, history })
}
