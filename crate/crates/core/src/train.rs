//! Training loop: corrupt, decode, assign, score every stage with the set
//! loss, backpropagate and take an AdamW step.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::assignment::{assign_topk, pairwise_cost, set_loss, CostWeights, FocalParams, DEFAULT_TOP_K};
use crate::corruption::{corrupt, unscale_signal, PaddingStrategy, DEFAULT_SCALE};
use crate::denoiser::{Decoder, FeatureGrid};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::neural::{AdamW, Tape, Tensor};
use crate::rng::{self, DetRng};
use crate::schedule::Schedule;
use crate::synthdata::Scene;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub n_train: usize,
    pub padding: PaddingStrategy,
    pub scale: f64,
    pub top_k: usize,
    pub weights: CostWeights,
    pub focal: FocalParams,
    pub optimizer: AdamW,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    /// Divide the learning rate by 10 at 7/9 and again at 14/15 of the run.
    pub lr_drops: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            n_train: 16,
            padding: PaddingStrategy::default(),
            scale: DEFAULT_SCALE,
            top_k: DEFAULT_TOP_K,
            weights: CostWeights::default(),
            focal: FocalParams::default(),
            optimizer: AdamW::default(),
            clip_norm: 1.0,
            lr_drops: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_train == 0 || self.top_k == 0 {
            return Err(Error::config("batch_size, n_train and top_k must be positive"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::config("scale must be positive"));
        }
        if !(self.optimizer.lr > 0.0) || !(self.clip_norm >= 0.0) {
            return Err(Error::config("lr must be positive and clip_norm non-negative"));
        }
        Ok(())
    }
}

/// Learning-rate multiplier at `progress` in `[0, 1)` of the run.
pub fn lr_factor(progress: f64, drops: bool) -> f64 {
    if !drops || progress < 7.0 / 9.0 {
        1.0
    } else if progress < 14.0 / 15.0 {
        0.1
    } else {
        0.01
    }
}

/// Loss of one scene summed over decoder stages.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
}

impl LossParts {
    fn add(&mut self, other: &LossParts) {
        self.total += other.total;
        self.cls += other.cls;
        self.l1 += other.l1;
        self.giou += other.giou;
    }

    fn scaled(&self, f: f64) -> LossParts {
        LossParts { total: self.total * f, cls: self.cls * f, l1: self.l1 * f, giou: self.giou * f }
    }
}

/// Forward and backward pass for one corrupted scene. Parameter gradients
/// are accumulated into `decoder`; the matching is recomputed from the
/// current predictions of every stage.
pub fn scene_loss(
    decoder: &mut Decoder,
    features: &FeatureGrid,
    z_t: &[[f64; 4]],
    t: usize,
    gt_boxes: &[BoundingBox],
    gt_labels: &[usize],
    config: &TrainConfig,
) -> Result<LossParts> {
    let boxes: Vec<BoundingBox> = z_t.iter().map(|z| unscale_signal(*z, config.scale)).collect();
    let k = decoder.config().num_classes;
    let mut tape = Tape::new();
    let stages = decoder.forward(&mut tape, features, &boxes, t as i64)?;
    let mut parts = LossParts::default();
    let mut seeds = Vec::with_capacity(2 * stages.len());
    for s in &stages {
        let pred: Vec<BoundingBox> =
            tape.value(s.boxes).data().chunks_exact(4).map(|c| BoundingBox::new(c[0], c[1], c[2], c[3])).collect();
        let logits = tape.value(s.logits).data().to_vec();
        let cost = pairwise_cost(&pred, &logits, k, gt_boxes, gt_labels, config.weights, config.focal)?;
        let matching = assign_topk(&cost, config.top_k);
        let loss = set_loss(&pred, &logits, k, &matching, gt_boxes, gt_labels, config.weights, config.focal)?;
        parts.add(&LossParts { total: loss.total, cls: loss.cls, l1: loss.l1, giou: loss.giou });
        let n = pred.len();
        seeds.push((s.boxes, Tensor::matrix(n, 4, loss.grad_boxes.into_iter().flatten().collect())?));
        seeds.push((s.logits, Tensor::matrix(n, k, loss.grad_logits)?));
    }
    let root = tape.external_loss(parts.total, seeds)?;
    tape.backward(root, decoder.params_mut())?;
    Ok(parts)
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: LossParts,
    /// Mean global gradient norm before clipping.
    pub grad_norm: f64,
    /// Optimizer steps taken so far, across all epochs.
    pub step: u64,
    /// Mean scene loss of every optimizer step in this epoch.
    pub step_losses: Vec<f64>,
}

/// Owns the model, schedule and random stream of one training run.
pub struct Trainer {
    pub decoder: Decoder,
    pub config: TrainConfig,
    schedule: Schedule,
    rng: DetRng,
    epoch: usize,
}

impl Trainer {
    pub fn new(decoder: Decoder, schedule: Schedule, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        // resuming from a checkpoint continues a distinct stream
        let rng = rng::substream(config.seed, decoder.params().step());
        Ok(Self { decoder, config, schedule, rng, epoch: 0 })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// One pass over `scenes` in shuffled order. `features[i]` conditions
    /// `scenes[i]`.
    pub fn train_epoch(&mut self, scenes: &[Scene], features: &[FeatureGrid]) -> Result<EpochStats> {
        if scenes.len() != features.len() {
            return Err(Error::shape("train_epoch", format!("{} scenes, {} feature grids", scenes.len(), features.len())));
        }
        self.epoch += 1;
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = LossParts::default();
        let mut norm_sum = 0.0;
        let mut step_losses = Vec::with_capacity(order.len().div_ceil(self.config.batch_size));
        let num_batches = order.len().div_ceil(self.config.batch_size);
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let mut batch_loss = LossParts::default();
            for &i in batch {
                let s = &scenes[i];
                let d = corrupt(&s.boxes, &s.labels, self.config.n_train, self.config.padding, self.config.scale, &self.schedule, &mut self.rng);
                let parts = scene_loss(&mut self.decoder, &features[i], &d.z_t, d.t, &d.gt_boxes, &d.gt_labels, &self.config)?;
                if !parts.total.is_finite() {
                    return Err(Error::config(format!(
                        "non-finite loss at epoch {}, scene {} (t = {}): cls {} l1 {} giou {}",
                        self.epoch, s.image_id, d.t, parts.cls, parts.l1, parts.giou
                    )));
                }
                batch_loss.add(&parts);
            }
            let inv = 1.0 / batch.len() as f64;
            let params = self.decoder.params_mut();
            params.scale_grads(inv);
            norm_sum += if self.config.clip_norm > 0.0 { params.clip_grad_norm(self.config.clip_norm) } else { params.grad_norm() };
            let progress = (self.epoch - 1) as f64 / self.config.epochs.max(1) as f64 + b as f64 / (num_batches * self.config.epochs.max(1)) as f64;
            let optimizer = AdamW { lr: self.config.optimizer.lr * lr_factor(progress, self.config.lr_drops), ..self.config.optimizer };
            optimizer.step(params);
            step_losses.push(batch_loss.total * inv);
            sum.add(&batch_loss);
        }
        let n = scenes.len().max(1) as f64;
        Ok(EpochStats {
            epoch: self.epoch,
            loss: sum.scaled(1.0 / n),
            grad_norm: norm_sum / step_losses.len().max(1) as f64,
            step: self.decoder.params().step(),
            step_losses,
        })
    }

    pub fn into_decoder(self) -> Decoder {
        self.decoder
    }
}
