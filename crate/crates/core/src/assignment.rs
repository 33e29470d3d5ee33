//! Matching cost, top-k label assignment and the multi-task set loss.
//!
//! Classification uses per-class sigmoid scores with focal weighting; box
//! regression uses an L1 term on normalized `(cx, cy, w, h)` plus a GIoU term.
//! The loss comes with closed-form gradients with respect to the predicted
//! boxes and logits so it can seed the decoder's backward pass.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{giou, giou_with_grad, BoundingBox};
use crate::math;

/// Probabilities are kept inside `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub const PROB_FLOOR: f64 = 1e-8;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { cls: 2.0, l1: 5.0, giou: 2.0 }
    }
}

impl CostWeights {
    pub fn scaled(self, c: f64) -> Self {
        Self { cls: self.cls * c, l1: self.l1 * c, giou: self.giou * c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

fn floor_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Focal loss of one sigmoid probability against a binary target.
pub fn focal_term(p: f64, is_positive: bool, alpha: f64, gamma: f64) -> f64 {
    let p = floor_prob(p);
    if is_positive {
        -alpha * math::powf(1.0 - p, gamma) * math::ln(p)
    } else {
        -(1.0 - alpha) * math::powf(p, gamma) * math::ln(1.0 - p)
    }
}

/// Focal loss as a function of the logit, with its derivative.
fn focal_from_logit(logit: f64, is_positive: bool, focal: FocalParams) -> (f64, f64) {
    let FocalParams { alpha, gamma } = focal;
    let raw = math::sigmoid(logit);
    let p = floor_prob(raw);
    let value = focal_term(p, is_positive, alpha, gamma);
    if p != raw {
        return (value, 0.0);
    }
    let d_dp = if is_positive {
        -alpha * (-gamma * math::powf(1.0 - p, gamma - 1.0) * math::ln(p) + math::powf(1.0 - p, gamma) / p)
    } else {
        -(1.0 - alpha) * (gamma * math::powf(p, gamma - 1.0) * math::ln(1.0 - p) - math::powf(p, gamma) / (1.0 - p))
    };
    (value, d_dp * p * (1.0 - p))
}

/// Mean absolute difference over the four box components.
pub fn l1_distance(a: BoundingBox, b: BoundingBox) -> f64 {
    a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0
}

/// Dense `rows x cols` matrix of matching costs, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged cost matrix");
        Self { rows: rows.len(), cols, data: rows.concat() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn check_logits(op: &'static str, n_pred: usize, logits: &[f64], num_classes: usize) -> Result<()> {
    if num_classes == 0 || logits.len() != n_pred * num_classes {
        return Err(Error::shape(
            op,
            alloc::format!("{} logits for {n_pred} predictions x {num_classes} classes", logits.len()),
        ));
    }
    Ok(())
}

fn check_gt(op: &'static str, gt_boxes: &[BoundingBox], gt_labels: &[usize], num_classes: usize) -> Result<()> {
    if gt_boxes.len() != gt_labels.len() {
        return Err(Error::shape(op, alloc::format!("{} boxes but {} labels", gt_boxes.len(), gt_labels.len())));
    }
    if let Some(l) = gt_labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::shape(op, alloc::format!("label {l} outside {num_classes} classes")));
    }
    Ok(())
}

/// Matching cost between every prediction (rows) and ground truth (columns).
///
/// `pred_logits` is `N_pred x num_classes`, row-major.
pub fn pairwise_cost(
    pred_boxes: &[BoundingBox],
    pred_logits: &[f64],
    num_classes: usize,
    gt_boxes: &[BoundingBox],
    gt_labels: &[usize],
    weights: CostWeights,
    focal: FocalParams,
) -> Result<CostMatrix> {
    check_logits("pairwise_cost", pred_boxes.len(), pred_logits, num_classes)?;
    check_gt("pairwise_cost", gt_boxes, gt_labels, num_classes)?;
    let cols = gt_boxes.len();
    let mut data = Vec::with_capacity(pred_boxes.len() * cols);
    for (i, pred) in pred_boxes.iter().enumerate() {
        let pc = pred.to_corners();
        for (gt, &label) in gt_boxes.iter().zip(gt_labels) {
            let p = math::sigmoid(pred_logits[i * num_classes + label]);
            let cls = focal_term(p, true, focal.alpha, focal.gamma);
            let l1 = l1_distance(*pred, *gt);
            let g = giou(&pc, &gt.to_corners());
            data.push(weights.cls * cls + weights.l1 * l1 + weights.giou * (1.0 - g));
        }
    }
    Ok(CostMatrix { rows: pred_boxes.len(), cols, data })
}

/// Positive (prediction, ground truth) pairs and the remaining negatives.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    /// Sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    /// Sorted ascending.
    pub negatives: Vec<usize>,
}

impl MatchResult {
    pub fn num_positives(&self) -> usize {
        self.pairs.len()
    }
}

/// Each ground truth claims its `k` cheapest predictions (ties: lower
/// prediction index). A prediction claimed by several ground truths goes to
/// the one it is cheapest for (ties: lower ground-truth index).
pub fn assign_topk(cost: &CostMatrix, k: usize) -> MatchResult {
    assert!(k >= 1, "top-k assignment needs k >= 1");
    let n = cost.rows();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for j in 0..cost.cols() {
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| cost.get(a, j).total_cmp(&cost.get(b, j)).then(a.cmp(&b)));
        for &i in order.iter().take(k) {
            owner[i] = match owner[i] {
                Some(prev) if cost.get(i, prev).total_cmp(&cost.get(i, j)).is_le() => Some(prev),
                _ => Some(j),
            };
        }
    }
    let mut result = MatchResult::default();
    for (i, o) in owner.into_iter().enumerate() {
        match o {
            Some(j) => result.pairs.push((i, j)),
            None => result.negatives.push(i),
        }
    }
    result
}

/// Loss value, its unweighted parts and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SetLoss {
    pub total: f64,
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    /// d total / d pred box `(cx, cy, w, h)`.
    pub grad_boxes: Vec<[f64; 4]>,
    /// d total / d logit, same layout as the logits.
    pub grad_logits: Vec<f64>,
}

/// Weighted focal + L1 + GIoU loss for one image.
///
/// Classification is summed over every prediction and class (positives
/// target their matched class, negatives target all-background); box terms
/// cover matched pairs only. All three parts are divided by the number of
/// positives, floored at one.
#[allow(clippy::too_many_arguments)]
pub fn set_loss(
    pred_boxes: &[BoundingBox],
    pred_logits: &[f64],
    num_classes: usize,
    matching: &MatchResult,
    gt_boxes: &[BoundingBox],
    gt_labels: &[usize],
    weights: CostWeights,
    focal: FocalParams,
) -> Result<SetLoss> {
    let n = pred_boxes.len();
    check_logits("set_loss", n, pred_logits, num_classes)?;
    check_gt("set_loss", gt_boxes, gt_labels, num_classes)?;
    if let Some(&(i, j)) = matching.pairs.iter().find(|&&(i, j)| i >= n || j >= gt_boxes.len()) {
        return Err(Error::shape("set_loss", alloc::format!("pair ({i}, {j}) out of range")));
    }

    let norm = matching.num_positives().max(1) as f64;
    let mut target: Vec<Option<usize>> = vec![None; n];
    for &(i, j) in &matching.pairs {
        target[i] = Some(gt_labels[j]);
    }

    let mut grad_logits = vec![0.0; pred_logits.len()];
    let mut cls = 0.0;
    for i in 0..n {
        for c in 0..num_classes {
            let idx = i * num_classes + c;
            let (v, d) = focal_from_logit(pred_logits[idx], target[i] == Some(c), focal);
            cls += v;
            grad_logits[idx] = weights.cls * d / norm;
        }
    }

    let mut grad_boxes = vec![[0.0; 4]; n];
    let mut l1 = 0.0;
    let mut giou_loss = 0.0;
    for &(i, j) in &matching.pairs {
        let pred = pred_boxes[i].to_array();
        let gt = gt_boxes[j].to_array();
        let (g, dg) = giou_with_grad(pred_boxes[i], gt_boxes[j]);
        giou_loss += 1.0 - g;
        for k in 0..4 {
            let diff = pred[k] - gt[k];
            l1 += diff.abs() / 4.0;
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            grad_boxes[i][k] += (weights.l1 * sign / 4.0 - weights.giou * dg[k]) / norm;
        }
    }

    let cls = cls / norm;
    let l1 = l1 / norm;
    let giou_part = giou_loss / norm;
    Ok(SetLoss {
        total: weights.cls * cls + weights.l1 * l1 + weights.giou * giou_part,
        cls,
        l1,
        giou: giou_part,
        grad_boxes,
        grad_logits,
    })
}
