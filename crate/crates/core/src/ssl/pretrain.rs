//! The self-supervised pretraining loop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig, WarmupCosine};
use crate::params::ParamStore;
use crate::rng::{derive_named, named_rng};
use crate::tensor::{Array, Tensor};
use crate::train::{check_grads, check_loss, epoch_order, stack};
use crate::unet::{Checkpoint, UNetConfig};

use super::augment::{augment, augment_view_rotated, AugmentConfig};
use super::losses::{awl_combine, contrastive_loss, effective_weights, restoration_loss, rotation_loss};
use super::model::SslModel;

pub const CHECKPOINT_KIND: &str = "pretrain";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Learnable coefficients.
    #[default]
    Awl,
    /// Every coefficient held at 1, i.e. half the plain sum of the losses.
    Equal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    pub model: UNetConfig,
    pub augment: AugmentConfig,
    pub epochs: usize,
    /// Views per step; two per volume, so it must be even.
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_epochs: usize,
    pub temperature: f64,
    pub embed_dim: usize,
    pub weighting: Weighting,
    pub optimizer: AdamWConfig,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            model: UNetConfig::default(),
            augment: AugmentConfig::default(),
            epochs: 300,
            batch_size: 16,
            lr: 1e-3,
            min_lr: 0.0,
            warmup_epochs: 20,
            temperature: 0.5,
            embed_dim: 384,
            weighting: Weighting::Awl,
            optimizer: AdamWConfig::default(),
            seed: 0,
        }
    }
}

impl SslConfig {
    /// Sizes for CPU runs on 32x32x16 phantoms.
    pub fn desk() -> Self {
        Self { model: UNetConfig::desk(), epochs: 30, batch_size: 8, warmup_epochs: 3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        if self.epochs == 0 || self.embed_dim == 0 {
            return Err(Error::invalid("epochs and embed_dim must be positive"));
        }
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(Error::invalid(format!("batch_size counts paired views: even and >= 4, got {}", self.batch_size)));
        }
        if !(self.lr > 0.0 && self.min_lr >= 0.0 && self.temperature > 0.0) {
            return Err(Error::invalid("lr and temperature must be positive, min_lr non-negative"));
        }
        let [h, w, _] = self.model.input_shape;
        if h != w {
            return Err(Error::invalid(format!("rotation needs a square in-plane grid, got {h}x{w}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub contrastive: f64,
    pub restoration: f64,
    pub rotation: f64,
    /// `1 / (2 c_t²)` for contrastive, restoration and rotation at epoch end.
    pub weights: [f64; 3],
    /// Training rotation accuracy over the epoch's views.
    pub rotation_accuracy: f64,
}

#[derive(Debug)]
pub struct Pretrained {
    pub cfg: SslConfig,
    pub model: SslModel,
    pub store: ParamStore<f32>,
    pub history: Vec<PretrainRecord>,
}

impl Pretrained {
    /// Encoder, heads and coefficients; the config is the full [`SslConfig`].
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::from_store(CHECKPOINT_KIND, &self.cfg, &self.store)
    }

    pub fn rotation_accuracy(&self, images: &[Array<f32>], seed: u64) -> Result<f64> {
        rotation_accuracy(&self.model, &self.store, &self.cfg, images, seed)
    }
}

/// Architecture recorded in a pretraining or finetuning checkpoint.
pub fn checkpoint_model(ckpt: &Checkpoint) -> Result<UNetConfig> {
    if ckpt.kind == CHECKPOINT_KIND {
        Ok(ckpt.config_as::<SslConfig>()?.model)
    } else {
        ckpt.config_as::<UNetConfig>()
    }
}

fn argmax(row: &[f32]) -> usize {
    (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
}

fn correct(logits: &Tensor<f32>, labels: &[usize]) -> usize {
    logits.data().chunks(4).zip(labels).filter(|(row, &l)| argmax(row) == l).count()
}

/// Accuracy on every quarter turn of every image, each passed through the
/// full augmentation with a stream derived from `seed`.
pub fn rotation_accuracy(
    model: &SslModel,
    store: &ParamStore<f32>,
    cfg: &SslConfig,
    images: &[Array<f32>],
    seed: u64,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::invalid("rotation accuracy needs at least one image"));
    }
    let p = store.bind_frozen();
    let mut hits = 0;
    for (i, image) in images.iter().enumerate() {
        let views = (0..4)
            .map(|k| augment_view_rotated(image, &cfg.augment, k, &mut named_rng(seed, &format!("heldout/{i}/{k}"))))
            .collect::<Result<Vec<_>>>()?;
        let x = Tensor::constant(stack(&views.iter().map(|v| &v.image).collect::<Vec<_>>())?);
        hits += correct(&model.forward(&p, &x)?.rotation, &[0, 1, 2, 3]);
    }
    Ok(hits as f64 / (4 * images.len()) as f64)
}

pub fn pretrain(corpus: &[Array<f32>], cfg: &SslConfig) -> Result<Pretrained> {
    pretrain_with(corpus, cfg, |_| {})
}

/// Trains on `corpus` of `(C, H, W, D)` images, calling `on_epoch` after
/// each epoch.
pub fn pretrain_with(
    corpus: &[Array<f32>],
    cfg: &SslConfig,
    mut on_epoch: impl FnMut(&PretrainRecord),
) -> Result<Pretrained> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("pretraining needs at least one volume"));
    }
    let (mut store, model) = SslModel::build::<f32>(&cfg.model, cfg.embed_dim, cfg.seed)?;
    let per_step = cfg.batch_size / 2;
    let steps_per_epoch = corpus.len().div_ceil(per_step);
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
        let order = epoch_order(corpus.len(), cfg.seed, "pretrain", epoch);
        let mut sums = [0.0; 4];
        let (mut hits, mut views) = (0, 0);
        for idx in order.chunks(per_step) {
            // A lone leftover volume still yields the two views of one pair,
            // too few for negatives; fill the batch from the epoch start.
            let mut idx = idx.to_vec();
            let mut fill = order.iter().cycle();
            while idx.len() < 2 {
                idx.push(*fill.next().unwrap());
            }
            let mut images = Vec::with_capacity(2 * idx.len());
            let mut targets = Vec::with_capacity(2 * idx.len());
            let mut labels = Vec::with_capacity(2 * idx.len());
            for (slot, &i) in idx.iter().enumerate() {
                let seed = derive_named(cfg.seed, &format!("augment/{epoch}/{step}/{slot}"));
                let pair = augment(&corpus[i], &cfg.augment, seed)?;
                for v in [pair.a, pair.b] {
                    labels.push(v.rotation);
                    images.push(v.image);
                    targets.push(v.target);
                }
            }
            let x = Tensor::constant(stack(&images.iter().collect::<Vec<_>>())?);
            let target = Tensor::constant(stack(&targets.iter().collect::<Vec<_>>())?);
            let p = store.bind();
            let (mut parts, mut hit) = ([0.0f32; 3], 0);
            let total = check_loss(
                step,
                model.forward(&p, &x).and_then(|out| {
                    let l_cl = contrastive_loss(&out.embedding, cfg.temperature)?;
                    let l_cr = restoration_loss(&out.reconstruction, &target)?;
                    let l_rot = rotation_loss(&out.rotation, &labels)?;
                    parts = [l_cl.item(), l_cr.item(), l_rot.item()];
                    hit = correct(&out.rotation, &labels);
                    match cfg.weighting {
                        Weighting::Awl => awl_combine([&l_cl, &l_cr, &l_rot], &model.coefficients(&p)?),
                        Weighting::Equal => l_cl.add(&l_cr)?.add(&l_rot)?.scale(0.5),
                    }
                }),
            )?;
            total.backward()?;
            let grads = p.grads();
            let value = total.item() as f64;
            check_grads(step, value, &grads)?;
            opt.step(&mut store, &grads, schedule.lr(step));
            let n = labels.len() as f64;
            sums[0] += value * n;
            for t in 0..3 {
                sums[t + 1] += parts[t] as f64 * n;
            }
            hits += hit;
            views += labels.len();
            step += 1;
        }
        let c: Vec<f64> = match cfg.weighting {
            Weighting::Awl => model.coefficients(&store.bind_frozen())?.data().iter().map(|&v| v as f64).collect(),
            Weighting::Equal => vec![1.0; 3],
        };
        let w = effective_weights(&c);
        let n = views as f64;
        let record = PretrainRecord {
            epoch: epoch + 1,
            loss: sums[0] / n,
            contrastive: sums[1] / n,
            restoration: sums[2] / n,
            rotation: sums[3] / n,
            weights: [w[0], w[1], w[2]],
            rotation_accuracy: hits as f64 / n,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(Pretrained { cfg: cfg.clone(), model, store, history })
}
