//! Inference loop: start from Gaussian boxes, repeatedly decode and step
//! toward the clean state, renew unconfident boxes, and ensemble every
//! step's detections with NMS.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::denoiser::{Denoiser, DecoderOutput, FeatureGrid};
use crate::error::{Error, Result};
use crate::geometry::{nms, BoundingBox};
use crate::math;
use crate::rng::{normal_row, standard_normal};
use crate::schedule::Schedule;

/// Per-step score floor for collecting detections into the ensemble.
pub const SCORE_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    pub n_eval: usize,
    pub steps: usize,
    pub eta: f64,
    pub renewal_threshold: f64,
    pub ensemble_nms_iou: f64,
    pub scale: f64,
    pub use_ddim: bool,
    pub use_renewal: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_eval: 100,
            steps: 1,
            eta: 1.0,
            renewal_threshold: 0.5,
            ensemble_nms_iou: 0.5,
            scale: crate::corruption::DEFAULT_SCALE,
            use_ddim: true,
            use_renewal: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if self.n_eval == 0 {
            return Err(Error::config("n_eval must be positive"));
        }
        if self.steps == 0 || self.steps > timesteps {
            return Err(Error::config(format!("steps must lie in 1..={timesteps}, got {}", self.steps)));
        }
        if !(0.0..=1.0).contains(&self.renewal_threshold) {
            return Err(Error::config("renewal_threshold must lie in [0, 1]"));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::config("eta must be non-negative"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::config("scale must be positive"));
        }
        if !(0.0..=1.0).contains(&self.ensemble_nms_iou) {
            return Err(Error::config("ensemble_nms_iou must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Final boxes of one image, best score first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detections {
    pub boxes: Vec<BoundingBox>,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Detections {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    fn push(&mut self, b: BoundingBox, score: f64, label: usize) {
        self.boxes.push(b);
        self.scores.push(score);
        self.labels.push(label);
    }
}

/// `steps + 1` evenly spaced integer times from `T - 1` down to `-1`,
/// paired consecutively.
pub fn time_pairs(timesteps: usize, steps: usize) -> Vec<(i64, i64)> {
    assert!(steps >= 1, "at least one sampling step is required");
    let times: Vec<i64> = (0..=steps).rev().map(|i| -1 + ((i * timesteps) / steps) as i64).collect();
    times.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Replaces every row scoring below `threshold` with a fresh standard-normal
/// row; other rows are left untouched.
pub fn box_renewal<R: Rng + ?Sized>(z: &mut [[f64; 4]], scores: &[f64], threshold: f64, rng: &mut R) {
    assert_eq!(z.len(), scores.len(), "one score per box");
    for (row, &s) in z.iter_mut().zip(scores) {
        if s < threshold {
            *row = normal_row(rng);
        }
    }
}

/// Best class and its probability for each prediction.
pub fn scores_and_labels(out: &DecoderOutput) -> (Vec<f64>, Vec<usize>) {
    let mut scores = Vec::with_capacity(out.len());
    let mut labels = Vec::with_capacity(out.len());
    for i in 0..out.len() {
        let (label, logit) = out
            .logits_of(i)
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &l)| if l > best.1 { (c, l) } else { best });
        scores.push(math::sigmoid(logit));
        labels.push(label);
    }
    (scores, labels)
}

/// Per-class NMS; survivors ordered by descending score (ties: earlier
/// candidate first).
pub fn class_aware_nms(candidates: &Detections, iou_threshold: f64) -> Detections {
    let mut keep: Vec<usize> = Vec::new();
    let mut classes: Vec<usize> = candidates.labels.clone();
    classes.sort_unstable();
    classes.dedup();
    for c in classes {
        let idx: Vec<usize> = (0..candidates.len()).filter(|&i| candidates.labels[i] == c).collect();
        let boxes: Vec<_> = idx.iter().map(|&i| candidates.boxes[i].to_corners()).collect();
        let scores: Vec<f64> = idx.iter().map(|&i| candidates.scores[i]).collect();
        keep.extend(nms(&boxes, &scores, iou_threshold).into_iter().map(|k| idx[k]));
    }
    keep.sort_by(|&a, &b| candidates.scores[b].total_cmp(&candidates.scores[a]).then(a.cmp(&b)));
    let mut out = Detections::default();
    for i in keep {
        out.push(candidates.boxes[i], candidates.scores[i], candidates.labels[i]);
    }
    out
}

/// Runs the full sampling loop for one image.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    features: &FeatureGrid,
    denoiser: &D,
    schedule: &Schedule,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Detections> {
    config.validate(schedule.timesteps())?;
    let mut z: Vec<[f64; 4]> = (0..config.n_eval).map(|_| normal_row(rng)).collect();
    let mut ensemble = Detections::default();
    for (t_now, t_next) in time_pairs(schedule.timesteps(), config.steps) {
        let out = denoiser.denoise(features, &z, t_now, config.scale)?;
        let (scores, labels) = scores_and_labels(&out);
        let final_boxes = &out.stages.last().expect("decoder has a stage").boxes;
        for i in 0..out.len() {
            if scores[i] >= SCORE_FLOOR {
                ensemble.push(final_boxes[i], scores[i], labels[i]);
            }
        }
        if t_next < 0 {
            break;
        }
        z = if config.use_ddim {
            let flat_z: Vec<f64> = z.iter().flatten().copied().collect();
            let flat_pred: Vec<f64> = out.boxes.iter().flatten().copied().collect();
            let noise: Vec<f64> = if config.eta > 0.0 { (0..flat_z.len()).map(|_| standard_normal(rng)).collect() } else { vec![] };
            let next = schedule.ddim_step(&flat_z, &flat_pred, t_now, t_next, config.eta, &noise)?;
            next.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect()
        } else {
            out.boxes.clone()
        };
        if config.use_renewal {
            box_renewal(&mut z, &scores, config.renewal_threshold, rng);
        }
    }
    Ok(class_aware_nms(&ensemble, config.ensemble_nms_iou))
}

/// One cell of a [`dynamic_eval`] sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicCell {
    pub n_eval: usize,
    pub steps: usize,
    pub detections: Detections,
}

/// Samples one image under every `(n_eval, steps)` combination with the same
/// denoiser; other knobs come from `base`.
pub fn dynamic_eval<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    features: &FeatureGrid,
    denoiser: &D,
    schedule: &Schedule,
    base: &SamplerConfig,
    n_eval_list: &[usize],
    steps_list: &[usize],
    rng: &mut R,
) -> Result<Vec<DynamicCell>> {
    let mut cells = Vec::with_capacity(n_eval_list.len() * steps_list.len());
    for &n_eval in n_eval_list {
        for &steps in steps_list {
            let config = SamplerConfig { n_eval, steps, ..*base };
            let detections = sample(features, denoiser, schedule, &config, rng)?;
            cells.push(DynamicCell { n_eval, steps, detections });
        }
    }
    Ok(cells)
}
