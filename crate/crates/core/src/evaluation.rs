//! COCO-style average precision and the experiment harnesses built on it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::denoiser::{Decoder, FeatureGrid, OracleDecoder};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::rng;
use crate::sampler::{sample, Detections, SamplerConfig};
use crate::schedule::Schedule;
use crate::synthdata::{rasterize, Scene};

/// IoU thresholds `0.50, 0.55, ..., 0.95`.
pub fn iou_thresholds() -> [f64; 10] {
    core::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub class: usize,
    pub num_gt: usize,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Mean over IoU thresholds 0.50:0.05:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Recall of every detection, averaged over classes and IoU thresholds.
    pub recall: f64,
    /// Classes with at least one ground-truth box.
    pub per_class: Vec<ClassResult>,
}

/// Precision/recall outcome for one class at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ClassCurve {
    ap: f64,
    recall: f64,
}

/// Detections of `class`, best score first. Equal scores are ordered by box
/// coordinates and then image, so the ranking does not depend on input order.
fn ranked(detections: &[Detections], class: usize) -> Vec<(usize, BoundingBox, f64)> {
    let mut out: Vec<(usize, BoundingBox, f64)> = Vec::new();
    for (img, d) in detections.iter().enumerate() {
        for i in 0..d.len() {
            if d.labels[i] == class {
                out.push((img, d.boxes[i], d.scores[i]));
            }
        }
    }
    out.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| {
                let (x, y) = (a.1.to_array(), b.1.to_array());
                x.iter().zip(&y).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(core::cmp::Ordering::Equal)
            })
            .then(a.0.cmp(&b.0))
    });
    out
}

/// True/false positive flags in ranked order. Each detection takes the
/// unmatched ground truth of its image with the highest IoU, provided it
/// reaches `threshold`.
fn match_ranked(ranked: &[(usize, BoundingBox, f64)], gt: &[Vec<BoundingBox>], threshold: f64) -> Vec<bool> {
    let mut taken: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    ranked
        .iter()
        .map(|(img, b, _)| {
            let c = b.to_corners();
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gt[*img].iter().enumerate() {
                if taken[*img][j] {
                    continue;
                }
                let v = iou(&c, &g.to_corners());
                if v >= threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => {
                    taken[*img][j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Area under the all-point interpolated precision/recall curve.
fn all_point_ap(tp: &[bool], num_gt: usize) -> ClassCurve {
    if num_gt == 0 {
        return ClassCurve { ap: 0.0, recall: 0.0 };
    }
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &is_tp) in tp.iter().enumerate() {
        hits += is_tp as usize;
        precision.push(hits as f64 / (k + 1) as f64);
        recall.push(hits as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ClassCurve { ap, recall: prev_recall }
}

fn gt_of_class(ground_truth: &[Scene], class: usize) -> Vec<Vec<BoundingBox>> {
    ground_truth
        .iter()
        .map(|s| s.boxes.iter().zip(&s.labels).filter(|(_, &l)| l == class).map(|(b, _)| *b).collect())
        .collect()
}

fn class_curve(detections: &[Detections], ground_truth: &[Scene], class: usize, threshold: f64) -> ClassCurve {
    let gt = gt_of_class(ground_truth, class);
    let num_gt = gt.iter().map(Vec::len).sum();
    let tp = match_ranked(&ranked(detections, class), &gt, threshold);
    all_point_ap(&tp, num_gt)
}

fn classes_with_gt(ground_truth: &[Scene]) -> Vec<(usize, usize)> {
    let k = ground_truth.iter().map(|s| s.num_classes).max().unwrap_or(0);
    let mut counts = vec![0usize; k];
    for s in ground_truth {
        for &l in &s.labels {
            counts[l] += 1;
        }
    }
    counts.into_iter().enumerate().filter(|&(_, n)| n > 0).collect()
}

/// Class-mean average precision at one IoU threshold. `detections[i]`
/// belongs to `ground_truth[i]`. Classes without ground truth are skipped;
/// with no ground truth at all the result is 0.
pub fn average_precision(detections: &[Detections], ground_truth: &[Scene], iou_threshold: f64) -> f64 {
    assert_eq!(detections.len(), ground_truth.len(), "one detection set per image");
    let classes = classes_with_gt(ground_truth);
    if classes.is_empty() {
        return 0.0;
    }
    let sum: f64 = classes.iter().map(|&(c, _)| class_curve(detections, ground_truth, c, iou_threshold).ap).sum();
    sum / classes.len() as f64
}

/// AP, AP50, AP75, recall and the per-class breakdown.
pub fn summarize(detections: &[Detections], ground_truth: &[Scene]) -> EvalResult {
    assert_eq!(detections.len(), ground_truth.len(), "one detection set per image");
    let thresholds = iou_thresholds();
    let classes = classes_with_gt(ground_truth);
    let mut per_class = Vec::with_capacity(classes.len());
    let mut recall = 0.0;
    for &(class, num_gt) in &classes {
        let curves: Vec<ClassCurve> = thresholds.iter().map(|&thr| class_curve(detections, ground_truth, class, thr)).collect();
        recall += curves.iter().map(|c| c.recall).sum::<f64>() / thresholds.len() as f64;
        per_class.push(ClassResult {
            class,
            num_gt,
            ap: curves.iter().map(|c| c.ap).sum::<f64>() / thresholds.len() as f64,
            ap50: curves[0].ap,
            ap75: curves[5].ap,
        });
    }
    let n = per_class.len().max(1) as f64;
    EvalResult {
        ap: per_class.iter().map(|c| c.ap).sum::<f64>() / n,
        ap50: per_class.iter().map(|c| c.ap50).sum::<f64>() / n,
        ap75: per_class.iter().map(|c| c.ap75).sum::<f64>() / n,
        recall: recall / n,
        per_class,
    }
}

/// What produces the box predictions during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    Network(&'a Decoder),
    /// A ground-truth-snapping oracle built per scene.
    Oracle,
}

/// Evaluation inputs shared by every run in a harness.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub scenes: &'a [Scene],
    pub grid_size: usize,
    pub schedule: &'a Schedule,
    /// Scene `i` samples from stream `image_id` of this seed.
    pub seed: u64,
}

impl EvalContext<'_> {
    fn features(&self) -> Vec<FeatureGrid> {
        self.scenes.iter().map(|s| rasterize(s, self.grid_size, self.grid_size)).collect()
    }
}

fn detect_all(model: Model<'_>, ctx: &EvalContext<'_>, features: &[FeatureGrid], config: &SamplerConfig) -> Result<Vec<Detections>> {
    ctx.scenes
        .iter()
        .zip(features)
        .map(|(scene, f)| {
            let mut r = rng::substream(ctx.seed, scene.image_id);
            match model {
                Model::Network(d) => sample(f, d, ctx.schedule, config, &mut r),
                Model::Oracle => sample(f, &OracleDecoder::new(scene), ctx.schedule, config, &mut r),
            }
        })
        .collect()
}

/// Samples every scene and returns the detections alongside their summary.
pub fn detect_and_evaluate(model: Model<'_>, ctx: &EvalContext<'_>, config: &SamplerConfig) -> Result<(Vec<Detections>, EvalResult)> {
    if ctx.scenes.is_empty() {
        return Err(Error::config("evaluation needs at least one scene"));
    }
    let detections = detect_all(model, ctx, &ctx.features(), config)?;
    let result = summarize(&detections, ctx.scenes);
    Ok((detections, result))
}

pub fn evaluate(model: Model<'_>, ctx: &EvalContext<'_>, config: &SamplerConfig) -> Result<EvalResult> {
    detect_and_evaluate(model, ctx, config).map(|(_, r)| r)
}

/// A result grid: one AP50 value per (row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub cells: Vec<EvalResult>,
}

/// Digits printed per cell by [`Table::to_text`].
pub const TEXT_PRECISION: usize = 4;

impl Table {
    /// Fixed-width rendering of the AP50 cells.
    pub fn to_text(&self) -> String {
        let cell = |v: f64| format!("{v:.prec$}", prec = TEXT_PRECISION);
        let mut widths: Vec<usize> = Vec::with_capacity(self.columns.len() + 1);
        widths.push(self.rows.iter().map(|r| r.label.len()).chain([self.row_header.len()]).max().unwrap_or(0));
        for (c, name) in self.columns.iter().enumerate() {
            let w = self.rows.iter().map(|r| cell(r.cells[c].ap50).len()).chain([name.len()]).max().unwrap_or(0);
            widths.push(w);
        }
        let mut out = format!("{} (AP50)\n", self.title);
        let line = |fields: &[String]| {
            let mut s = String::new();
            for (i, (f, w)) in fields.iter().zip(&widths).enumerate() {
                if i == 0 {
                    s.push_str(&format!("{f:<w$}"));
                } else {
                    s.push_str(&format!("  {f:>w$}"));
                }
            }
            s.push('\n');
            s
        };
        let header: Vec<String> = core::iter::once(self.row_header.clone()).chain(self.columns.iter().cloned()).collect();
        out.push_str(&line(&header));
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            let fields: Vec<String> = core::iter::once(r.label.clone()).chain(r.cells.iter().map(|c| cell(c.ap50))).collect();
            out.push_str(&line(&fields));
        }
        out
    }
}

/// Sampling-strategy grid: `{ddim} x {renewal}` rows over `steps_list`
/// columns, all from one model.
pub fn sampling_table(model: Model<'_>, ctx: &EvalContext<'_>, base: &SamplerConfig, steps_list: &[usize]) -> Result<Table> {
    let features = ctx.features();
    let mut rows = Vec::with_capacity(4);
    for (use_ddim, use_renewal) in [(false, false), (true, false), (false, true), (true, true)] {
        let mark = |on: bool| if on { "yes" } else { "no" };
        let label = format!("ddim={} renewal={}", mark(use_ddim), mark(use_renewal));
        let mut cells = Vec::with_capacity(steps_list.len());
        for &steps in steps_list {
            let cfg = SamplerConfig { steps, use_ddim, use_renewal, ..*base };
            cells.push(summarize(&detect_all(model, ctx, &features, &cfg)?, ctx.scenes));
        }
        rows.push(TableRow { label, cells });
    }
    Ok(Table {
        title: String::from("sampling strategy"),
        row_header: String::from("strategy"),
        columns: steps_list.iter().map(|s| format!("steps={s}")).collect(),
        rows,
    })
}

/// `n_eval x steps` grid from one model.
pub fn dynamic_table(model: Model<'_>, ctx: &EvalContext<'_>, base: &SamplerConfig, n_eval_list: &[usize], steps_list: &[usize]) -> Result<Table> {
    let features = ctx.features();
    let mut rows = Vec::with_capacity(n_eval_list.len());
    for &n_eval in n_eval_list {
        let mut cells = Vec::with_capacity(steps_list.len());
        for &steps in steps_list {
            let cfg = SamplerConfig { n_eval, steps, ..*base };
            cells.push(summarize(&detect_all(model, ctx, &features, &cfg)?, ctx.scenes));
        }
        rows.push(TableRow { label: format!("n_eval={n_eval}"), cells });
    }
    Ok(Table {
        title: String::from("dynamic boxes and steps"),
        row_header: String::from("boxes"),
        columns: steps_list.iter().map(|s| format!("steps={s}")).collect(),
        rows,
    })
}

/// One row of a checkpoint sweep. `model` is `None` when the checkpoint the
/// row needs was not supplied; `scale` is the signal scale it was trained
/// with.
#[derive(Debug, Clone)]
pub struct CheckpointRow<'a> {
    pub label: String,
    pub model: Option<Model<'a>>,
    pub scale: f64,
}

/// One row per checkpoint, one column per `n_eval`. Fails on the first row
/// without a model.
pub fn checkpoint_table(
    title: &str,
    row_header: &str,
    rows: &[CheckpointRow<'_>],
    ctx: &EvalContext<'_>,
    base: &SamplerConfig,
    n_eval_list: &[usize],
) -> Result<Table> {
    if let Some(missing) = rows.iter().find(|r| r.model.is_none()) {
        return Err(Error::MissingCheckpoint(missing.label.clone()));
    }
    let features = ctx.features();
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let model = row.model.expect("checked above");
        let mut cells = Vec::with_capacity(n_eval_list.len());
        for &n_eval in n_eval_list {
            let cfg = SamplerConfig { n_eval, scale: row.scale, ..*base };
            cells.push(summarize(&detect_all(model, ctx, &features, &cfg)?, ctx.scenes));
        }
        out.push(TableRow { label: row.label.clone(), cells });
    }
    Ok(Table {
        title: String::from(title),
        row_header: String::from(row_header),
        columns: n_eval_list.iter().map(|n| format!("n_eval={n}")).collect(),
        rows: out,
    })
}

/// Which tables [`ablate`] should produce.
#[derive(Debug, Clone, Default)]
pub struct AblationPlan<'a> {
    pub signal_scale: Vec<CheckpointRow<'a>>,
    pub padding: Vec<CheckpointRow<'a>>,
    /// Model and step columns for the sampling-strategy grid.
    pub sampling: Option<(Model<'a>, Vec<usize>)>,
    /// Checkpoints trained with different `n_train`, and the `n_eval` columns.
    pub box_count: Option<(Vec<CheckpointRow<'a>>, Vec<usize>)>,
    /// Model, `n_eval` rows and step columns.
    pub dynamic: Option<(Model<'a>, Vec<usize>, Vec<usize>)>,
}

pub fn ablate(plan: &AblationPlan<'_>, ctx: &EvalContext<'_>, base: &SamplerConfig) -> Result<Vec<Table>> {
    let mut tables = Vec::new();
    if !plan.signal_scale.is_empty() {
        tables.push(checkpoint_table("signal scale", "scale", &plan.signal_scale, ctx, base, &[base.n_eval])?);
    }
    if !plan.padding.is_empty() {
        tables.push(checkpoint_table("box padding", "padding", &plan.padding, ctx, base, &[base.n_eval])?);
    }
    if let Some((model, steps)) = &plan.sampling {
        tables.push(sampling_table(*model, ctx, base, steps)?);
    }
    if let Some((rows, n_eval)) = &plan.box_count {
        tables.push(checkpoint_table("train vs eval boxes", "n_train", rows, ctx, base, n_eval)?);
    }
    if let Some((model, n_eval, steps)) = &plan.dynamic {
        tables.push(dynamic_table(*model, ctx, base, n_eval, steps)?);
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate, DatasetSpec};

    fn det(items: &[(BoundingBox, f64, usize)]) -> Detections {
        Detections {
            boxes: items.iter().map(|i| i.0).collect(),
            scores: items.iter().map(|i| i.1).collect(),
            labels: items.iter().map(|i| i.2).collect(),
        }
    }

    fn scene(boxes: &[BoundingBox], labels: &[usize]) -> Scene {
        Scene { image_id: 0, boxes: boxes.to_vec(), labels: labels.to_vec(), num_classes: 2 }
    }

    const A: BoundingBox = BoundingBox { cx: 0.25, cy: 0.25, w: 0.2, h: 0.2 };
    const B: BoundingBox = BoundingBox { cx: 0.75, cy: 0.75, w: 0.2, h: 0.2 };
    const MISS: BoundingBox = BoundingBox { cx: 0.5, cy: 0.1, w: 0.1, h: 0.1 };

    #[test]
    fn perfect_and_empty() {
        let gt = [scene(&[A], &[0])];
        assert_eq!(average_precision(&[det(&[(A, 0.9, 0)])], &gt, 0.5), 1.0);
        assert_eq!(average_precision(&[Detections::default()], &gt, 0.5), 0.0);
    }

    #[test]
    fn hand_integrated_curve() {
        let gt = [scene(&[A, B], &[0, 0])];
        let d = det(&[(A, 0.9, 0), (MISS, 0.8, 0), (B, 0.7, 0)]);
        assert!((average_precision(&[d], &gt, 0.5) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn classes_are_averaged() {
        let gt = [scene(&[A, B], &[0, 1])];
        let d = det(&[(A, 0.9, 0), (B, 0.9, 0)]);
        // class 0 perfect, class 1 never detected
        assert_eq!(average_precision(&[d], &gt, 0.5), 0.5);
    }

    #[test]
    fn no_ground_truth_is_zero() {
        let gt = [scene(&[], &[])];
        assert_eq!(average_precision(&[det(&[(A, 0.9, 0)])], &gt, 0.5), 0.0);
    }

    #[test]
    fn duplicate_is_false_positive() {
        let gt = [scene(&[A], &[0])];
        let d = det(&[(A, 0.9, 0), (A, 0.95, 0)]);
        assert_eq!(average_precision(&[d], &gt, 0.5), 1.0);
        let d = det(&[(MISS, 0.99, 0), (A, 0.9, 0)]);
        assert_eq!(average_precision(&[d], &gt, 0.5), 0.5);
    }

    #[test]
    fn summary_bounds() {
        let gt = [scene(&[A, B], &[0, 1])];
        let shifted = BoundingBox::new(A.cx + 0.03, A.cy, A.w, A.h);
        let r = summarize(&[det(&[(shifted, 0.9, 0), (B, 0.8, 1)])], &gt);
        assert_eq!(r.ap50, 1.0);
        assert!(r.ap <= r.ap50 && r.ap > 0.0);
        assert!(r.ap75 <= r.ap50);
        assert!((0.0..=1.0).contains(&r.recall));
        assert_eq!(r.per_class.len(), 2);
    }

    #[test]
    fn table_text_lists_every_cell() {
        let scenes = generate(&DatasetSpec { num_scenes: 4, seed: 2, ..DatasetSpec::default() }).unwrap();
        let schedule = Schedule::cosine(100).unwrap();
        let ctx = EvalContext { scenes: &scenes, grid_size: 16, schedule: &schedule, seed: 0 };
        let base = SamplerConfig { n_eval: 20, ..SamplerConfig::default() };
        let t = sampling_table(Model::Oracle, &ctx, &base, &[1, 2, 3]).unwrap();
        assert_eq!(t.rows.len(), 4);
        let text = t.to_text();
        assert_eq!(text.lines().count(), 1 + 1 + 1 + 4);
        assert!(text.lines().skip(3).all(|l| l.matches("1.0000").count() == 3));
    }

    #[test]
    fn missing_checkpoint_names_the_row() {
        let scenes = generate(&DatasetSpec { num_scenes: 2, ..DatasetSpec::default() }).unwrap();
        let schedule = Schedule::cosine(100).unwrap();
        let ctx = EvalContext { scenes: &scenes, grid_size: 16, schedule: &schedule, seed: 0 };
        let plan = AblationPlan {
            signal_scale: vec![
                CheckpointRow { label: "1.0".into(), model: Some(Model::Oracle), scale: 1.0 },
                CheckpointRow { label: "3.0".into(), model: None, scale: 3.0 },
            ],
            ..AblationPlan::default()
        };
        assert_eq!(ablate(&plan, &ctx, &SamplerConfig::default()), Err(Error::MissingCheckpoint("3.0".into())));
    }
}
