//! Procedural detection benchmark: scenes of labeled rectangles and the
//! feature grids that stand in for an image encoder.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::denoiser::FeatureGrid;
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::rng;

/// Placement attempts per object before it is skipped.
pub const MAX_ATTEMPTS: usize = 10_000;

/// Ground truth for one synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: u64,
    pub boxes: Vec<BoundingBox>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub num_scenes: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_side: f64,
    pub max_side: f64,
    pub max_overlap: f64,
    pub grid_size: usize,
    pub seed: u64,
    /// Offset added to scene indices when assigning image ids, so held-out
    /// splits can share a seed family without colliding ids.
    pub first_image_id: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_scenes: 2000,
            num_classes: 3,
            min_objects: 1,
            max_objects: 5,
            min_side: 0.08,
            max_side: 0.45,
            max_overlap: 0.3,
            grid_size: 16,
            seed: 0,
            first_image_id: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::config(format!("object range {}..={} is empty", self.min_objects, self.max_objects)));
        }
        if !(self.min_side > 0.0 && self.min_side <= self.max_side && self.max_side <= 1.0) {
            return Err(Error::config(format!("side range {}..{} must lie in (0, 1]", self.min_side, self.max_side)));
        }
        if !(0.0..=1.0).contains(&self.max_overlap) {
            return Err(Error::config("max_overlap must lie in [0, 1]"));
        }
        if self.grid_size == 0 {
            return Err(Error::config("grid_size must be positive"));
        }
        Ok(())
    }

    /// Channels produced by [`rasterize`] for this dataset.
    pub fn channels(&self) -> usize {
        self.num_classes + 2
    }
}

/// Rejection-samples every scene. Scene `i` draws from its own stream of the
/// seed, so a scene does not depend on how many scenes precede it.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<Scene>> {
    spec.validate()?;
    Ok((0..spec.num_scenes).map(|i| generate_scene(spec, i as u64)).collect())
}

fn generate_scene(spec: &DatasetSpec, index: u64) -> Scene {
    let mut r = rng::substream(spec.seed, index);
    let count = r.random_range(spec.min_objects..=spec.max_objects);
    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label = r.random_range(0..spec.num_classes);
        for _ in 0..MAX_ATTEMPTS {
            let w = r.random_range(spec.min_side..=spec.max_side);
            let h = r.random_range(spec.min_side..=spec.max_side);
            let cx = r.random_range(w / 2.0..=1.0 - w / 2.0);
            let cy = r.random_range(h / 2.0..=1.0 - h / 2.0);
            let candidate = BoundingBox::new(cx, cy, w, h);
            let c = candidate.to_corners();
            if boxes.iter().all(|b| iou(&b.to_corners(), &c) <= spec.max_overlap) {
                boxes.push(candidate);
                labels.push(label);
                break;
            }
        }
    }
    Scene { image_id: spec.first_image_id + index, boxes, labels, num_classes: spec.num_classes }
}

/// Length of the overlap of `[a0, a1]` and `[b0, b1]`.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Feature grid with one coverage channel per class (fraction of each cell
/// covered by boxes of that class, capped at 1) followed by the cell-center
/// x and y coordinate ramps.
pub fn rasterize(scene: &Scene, height: usize, width: usize) -> FeatureGrid {
    let k = scene.num_classes;
    let mut grid = FeatureGrid::zeros(k + 2, height, width);
    let cell_w = 1.0 / width as f64;
    let cell_h = 1.0 / height as f64;
    for (b, &label) in scene.boxes.iter().zip(&scene.labels) {
        let c = b.to_corners();
        for y in 0..height {
            let oy = overlap(c.y0, c.y1, y as f64 * cell_h, (y + 1) as f64 * cell_h) / cell_h;
            if oy == 0.0 {
                continue;
            }
            for x in 0..width {
                let ox = overlap(c.x0, c.x1, x as f64 * cell_w, (x + 1) as f64 * cell_w) / cell_w;
                let v = grid.at_mut(label, y, x);
                *v = (*v + ox * oy).min(1.0);
            }
        }
    }
    for y in 0..height {
        for x in 0..width {
            *grid.at_mut(k, y, x) = (x as f64 + 0.5) / width as f64;
            *grid.at_mut(k + 1, y, x) = (y as f64 + 0.5) / height as f64;
        }
    }
    grid
}
