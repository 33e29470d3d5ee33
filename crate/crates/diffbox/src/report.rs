//! JSON shapes of everything the commands write.

use diffbox_core::evaluation::{EvalResult, Table};
use diffbox_core::sampler::Detections;
use diffbox_core::train::EpochStats;
use serde::{Deserialize, Serialize};

/// Final detections of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsRecord {
    pub image_id: u64,
    pub boxes: Vec<[f64; 4]>,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

impl DetectionsRecord {
    pub fn new(image_id: u64, d: &Detections) -> Self {
        Self { image_id, boxes: d.boxes.iter().map(|b| b.to_array()).collect(), scores: d.scores.clone(), labels: d.labels.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub num_gt: usize,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub recall: f64,
    pub per_class: Vec<ClassReport>,
    pub num_images: usize,
    pub n_eval: usize,
    pub steps: usize,
}

impl EvalReport {
    pub fn new(r: &EvalResult, num_images: usize, n_eval: usize, steps: usize) -> Self {
        Self {
            ap: r.ap,
            ap50: r.ap50,
            ap75: r.ap75,
            recall: r.recall,
            per_class: r
                .per_class
                .iter()
                .map(|c| ClassReport { class: c.class, num_gt: c.num_gt, ap: c.ap, ap50: c.ap50, ap75: c.ap75 })
                .collect(),
            num_images,
            n_eval,
            steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowReport {
    pub label: String,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<RowReport>,
}

impl From<&Table> for TableReport {
    fn from(t: &Table) -> Self {
        Self {
            title: t.title.clone(),
            row_header: t.row_header.clone(),
            columns: t.columns.clone(),
            rows: t
                .rows
                .iter()
                .map(|r| RowReport {
                    label: r.label.clone(),
                    cells: r.cells.iter().map(|c| CellReport { ap: c.ap, ap50: c.ap50, ap75: c.ap75, recall: c.recall }).collect(),
                })
                .collect(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub grad_norm: f64,
}

impl From<&EpochStats> for TrainLogRow {
    fn from(s: &EpochStats) -> Self {
        Self { epoch: s.epoch, step: s.step, loss: s.loss.total, cls: s.loss.cls, l1: s.loss.l1, giou: s.loss.giou, grad_norm: s.grad_norm }
    }
}
