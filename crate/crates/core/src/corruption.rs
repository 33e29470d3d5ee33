//! Training-side data path: pad ground truth to a fixed count, map boxes into
//! signal space and corrupt them at a random timestep.

use alloc::vec::Vec;

use rand::Rng;

use crate::geometry::BoundingBox;
use crate::rng::{normal_row, standard_normal};
use crate::schedule::Schedule;

/// Signal scale used when none is configured.
pub const DEFAULT_SCALE: f64 = 2.0;

/// How ground truth is extended to the fixed training box count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PaddingStrategy {
    /// Cycle through the ground-truth boxes.
    Repeat,
    /// Append Gaussian random boxes centered on the image.
    #[default]
    CatGaussian,
    /// Append uniformly random boxes.
    CatUniform,
    /// Append full-image boxes.
    CatFull,
}

impl PaddingStrategy {
    pub const ALL: [PaddingStrategy; 4] = [Self::Repeat, Self::CatGaussian, Self::CatUniform, Self::CatFull];

    pub fn name(self) -> &'static str {
        match self {
            Self::Repeat => "repeat",
            Self::CatGaussian => "cat-gaussian",
            Self::CatUniform => "cat-uniform",
            Self::CatFull => "cat-full",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// Corrupted training boxes for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusedBatch {
    /// `n_train` rows in signal space, clamped to `[-scale, scale]`.
    pub z_t: Vec<[f64; 4]>,
    pub t: usize,
    pub gt_boxes: Vec<BoundingBox>,
    pub gt_labels: Vec<usize>,
}

fn gaussian_box<R: Rng + ?Sized>(rng: &mut R) -> BoundingBox {
    let [a, b, c, d] = normal_row(rng);
    BoundingBox::new(0.5 + 0.5 * a, 0.5 + 0.5 * b, 0.5 + 0.5 * c, 0.5 + 0.5 * d).clamped()
}

/// Pads (or truncates) `gt` to exactly `n_train` boxes.
pub fn pad_boxes<R: Rng + ?Sized>(
    gt: &[BoundingBox],
    n_train: usize,
    strategy: PaddingStrategy,
    rng: &mut R,
) -> Vec<BoundingBox> {
    assert!(n_train >= 1, "n_train must be positive");
    if gt.len() > n_train {
        log::warn!("truncating {} ground-truth boxes to n_train = {n_train}", gt.len());
    }
    let mut out: Vec<BoundingBox> = gt.iter().take(n_train).copied().collect();
    let kept = out.len();
    for i in kept..n_train {
        let b = match strategy {
            PaddingStrategy::Repeat if kept > 0 => out[i % kept],
            PaddingStrategy::Repeat | PaddingStrategy::CatGaussian => gaussian_box(rng),
            PaddingStrategy::CatUniform => {
                BoundingBox::new(rng.random(), rng.random(), rng.random(), rng.random()).clamped()
            }
            PaddingStrategy::CatFull => BoundingBox::FULL_IMAGE,
        };
        out.push(b);
    }
    out
}

pub fn scale_signal(b: BoundingBox, scale: f64) -> [f64; 4] {
    b.to_array().map(|x| (2.0 * x - 1.0) * scale)
}

/// Maps a signal-space row back to a valid box.
pub fn unscale_signal(x: [f64; 4], scale: f64) -> BoundingBox {
    BoundingBox::from_array(x.map(|v| (v / scale + 1.0) / 2.0)).clamped()
}

fn clamp_signal(v: f64, scale: f64) -> f64 {
    v.clamp(-scale, scale)
}

/// Corrupts padded ground truth at a timestep drawn uniformly from `1..=T`.
pub fn corrupt<R: Rng + ?Sized>(
    gt: &[BoundingBox],
    labels: &[usize],
    n_train: usize,
    strategy: PaddingStrategy,
    scale: f64,
    schedule: &Schedule,
    rng: &mut R,
) -> DiffusedBatch {
    let t = rng.random_range(1..=schedule.timesteps());
    corrupt_at(gt, labels, n_train, strategy, scale, schedule, t, rng)
}

/// [`corrupt`] at a caller-chosen timestep. `t = 0` is the clean state
/// (`alpha_bar = 1`) and returns the scaled padded boxes unchanged.
#[allow(clippy::too_many_arguments)]
pub fn corrupt_at<R: Rng + ?Sized>(
    gt: &[BoundingBox],
    labels: &[usize],
    n_train: usize,
    strategy: PaddingStrategy,
    scale: f64,
    schedule: &Schedule,
    t: usize,
    rng: &mut R,
) -> DiffusedBatch {
    let padded = pad_boxes(gt, n_train, strategy, rng);
    let x0: Vec<f64> = padded.iter().flat_map(|b| scale_signal(*b, scale)).collect();
    let noise: Vec<f64> = (0..x0.len()).map(|_| standard_normal(rng)).collect();
    let z = if t == 0 { x0 } else { schedule.q_sample(&x0, t, &noise).expect("t inside the schedule") };
    let z_t = z
        .chunks_exact(4)
        .map(|c| [c[0], c[1], c[2], c[3]].map(|v| clamp_signal(v, scale)))
        .collect();
    let kept = gt.len().min(n_train);
    DiffusedBatch { z_t, t, gt_boxes: gt[..kept].to_vec(), gt_labels: labels[..kept].to_vec() }
}
