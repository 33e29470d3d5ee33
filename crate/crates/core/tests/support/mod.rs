//! Brute-force references and measurement helpers shared by the integration
//! tests and the acceptance harness.
#![allow(dead_code)]

use diffbox_core::assignment::{set_loss, CostWeights, FocalParams, MatchResult};
use diffbox_core::denoiser::{Decoder, DecoderConfig, FeatureGrid};
use diffbox_core::neural::{Tape, Tensor};
use diffbox_core::sampler::Detections;
use diffbox_core::synthdata::Scene;
use diffbox_core::{rng, BoundingBox, CornerBox};
use rand::Rng;

/// Intersection over union written out from corner coordinates.
pub fn iou_ref(a: &CornerBox, b: &CornerBox) -> f64 {
    let w = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let h = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = w * h;
    let union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Repeatedly takes the best remaining candidate and discards everything it
/// overlaps by more than `thr`.
pub fn nms_ref(boxes: &[CornerBox], scores: &[f64], thr: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut keep = Vec::new();
    while !alive.is_empty() {
        let mut best = alive[0];
        for &i in &alive[1..] {
            if scores[i] > scores[best] || (scores[i] == scores[best] && i < best) {
                best = i;
            }
        }
        keep.push(best);
        alive.retain(|&i| i != best && iou_ref(&boxes[best], &boxes[i]) <= thr);
    }
    keep
}

/// Top-k assignment from ranks: prediction `i` is among the `k` cheapest for
/// ground truth `j` when fewer than `k` predictions beat it (cost, then
/// index). Claimed predictions go to the cheapest claimant, lower index on
/// ties.
pub fn topk_ref(cost: &[Vec<f64>], k: usize) -> MatchResult {
    let n = cost.len();
    let g = cost.first().map_or(0, Vec::len);
    let mut result = MatchResult::default();
    for i in 0..n {
        let claims = (0..g).filter(|&j| {
            let rank = (0..n).filter(|&o| cost[o][j] < cost[i][j] || (cost[o][j] == cost[i][j] && o < i)).count();
            rank < k
        });
        let owner = claims.fold(None::<usize>, |best, j| match best {
            Some(b) if cost[i][b] <= cost[i][j] => Some(b),
            _ => Some(j),
        });
        match owner {
            Some(j) => result.pairs.push((i, j)),
            None => result.negatives.push(i),
        }
    }
    result
}

fn lex(a: &BoundingBox, b: &BoundingBox) -> std::cmp::Ordering {
    a.to_array().iter().zip(b.to_array().iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// Class-mean all-point AP: for each class, every true positive contributes
/// the best precision reached at or after its rank, divided by the number of
/// ground-truth boxes.
pub fn ap_ref(dets: &[Detections], scenes: &[Scene], thr: f64) -> f64 {
    let k = scenes.iter().map(|s| s.num_classes).max().unwrap_or(0);
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..k {
        let num_gt: usize = scenes.iter().map(|s| s.labels.iter().filter(|&&l| l == c).count()).sum();
        if num_gt == 0 {
            continue;
        }
        counted += 1;
        let mut list: Vec<(usize, BoundingBox, f64)> = Vec::new();
        for (img, d) in dets.iter().enumerate() {
            for i in 0..d.boxes.len() {
                if d.labels[i] == c {
                    list.push((img, d.boxes[i], d.scores[i]));
                }
            }
        }
        list.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| lex(&a.1, &b.1)).then(a.0.cmp(&b.0)));
        let mut used: Vec<Vec<bool>> = scenes.iter().map(|s| vec![false; s.boxes.len()]).collect();
        let mut tp = Vec::new();
        for (img, b, _) in &list {
            let s = &scenes[*img];
            let mut best = None;
            let mut best_iou = thr;
            for j in 0..s.boxes.len() {
                if s.labels[j] != c || used[*img][j] {
                    continue;
                }
                let v = iou_ref(&b.to_corners(), &s.boxes[j].to_corners());
                if v >= best_iou && best.is_none_or(|_| v > best_iou) {
                    best = Some(j);
                    best_iou = v;
                }
            }
            if let Some(j) = best {
                used[*img][j] = true;
            }
            tp.push(best.is_some());
        }
        let precision: Vec<f64> = (0..tp.len()).map(|r| tp[..=r].iter().filter(|&&x| x).count() as f64 / (r + 1) as f64).collect();
        let mut ap = 0.0;
        for r in 0..tp.len() {
            if tp[r] {
                ap += precision[r..].iter().copied().fold(0.0, f64::max) / num_gt as f64;
            }
        }
        total += ap;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

pub fn random_box<R: Rng>(r: &mut R) -> BoundingBox {
    let w = r.random_range(0.05..0.6);
    let h = r.random_range(0.05..0.6);
    BoundingBox::new(r.random_range(w / 2.0..1.0 - w / 2.0), r.random_range(h / 2.0..1.0 - h / 2.0), w, h)
}

/// A box near `b`, so that overlaps around typical thresholds are common.
pub fn jitter<R: Rng>(b: BoundingBox, amount: f64, r: &mut R) -> BoundingBox {
    let a = b.to_array();
    BoundingBox::new(
        a[0] + r.random_range(-amount..amount) * a[2],
        a[1] + r.random_range(-amount..amount) * a[3],
        a[2] * (1.0 + r.random_range(-amount..amount)),
        a[3] * (1.0 + r.random_range(-amount..amount)),
    )
    .clamped()
}

/// Scores drawn from a few levels so equal scores occur.
pub fn tied_score<R: Rng>(r: &mut R) -> f64 {
    r.random_range(1..=4) as f64 / 4.0
}

/// A small detection problem: up to `max_gt` objects per image and up to
/// `max_det` detections, many of them near an object.
pub fn random_problem<R: Rng>(r: &mut R, images: usize, max_gt: usize, max_det: usize, classes: usize) -> (Vec<Detections>, Vec<Scene>) {
    let mut dets = Vec::new();
    let mut scenes = Vec::new();
    for img in 0..images {
        let g = r.random_range(0..=max_gt);
        let boxes: Vec<BoundingBox> = (0..g).map(|_| random_box(r)).collect();
        let labels: Vec<usize> = (0..g).map(|_| r.random_range(0..classes)).collect();
        let mut d = Detections::default();
        for _ in 0..r.random_range(0..=max_det) {
            let (b, l) = if g > 0 && r.random_bool(0.7) {
                let j = r.random_range(0..g);
                (jitter(boxes[j], 0.3, r), if r.random_bool(0.8) { labels[j] } else { r.random_range(0..classes) })
            } else {
                (random_box(r), r.random_range(0..classes))
            };
            d.boxes.push(b);
            d.scores.push(tied_score(r));
            d.labels.push(l);
        }
        dets.push(d);
        scenes.push(Scene { image_id: img as u64, boxes, labels, num_classes: classes });
    }
    (dets, scenes)
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for gradient comparisons, above the central-difference
/// round-off for unit-scale losses at step 1e-5.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;

/// Worst relative error of the analytic set-loss gradients (boxes and
/// logits) against central differences, over one random instance with the
/// matching held fixed.
pub fn set_loss_fd_error(seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let k = 3;
    let n = r.random_range(4..=10);
    let g = r.random_range(1..=3);
    let gt: Vec<BoundingBox> = (0..g).map(|_| random_box(&mut r)).collect();
    let labels: Vec<usize> = (0..g).map(|_| r.random_range(0..k)).collect();
    let mut boxes: Vec<[f64; 4]> = (0..n).map(|_| random_box(&mut r).to_array()).collect();
    let mut logits: Vec<f64> = (0..n * k).map(|_| r.random_range(-3.0..3.0)).collect();
    let mut matching = MatchResult::default();
    for i in 0..n {
        if r.random_bool(0.6) {
            matching.pairs.push((i, r.random_range(0..g)));
        } else {
            matching.negatives.push(i);
        }
    }
    let (w, f) = (CostWeights::default(), FocalParams::default());
    let eval = |boxes: &[[f64; 4]], logits: &[f64]| {
        let bb: Vec<BoundingBox> = boxes.iter().map(|a| BoundingBox::new(a[0], a[1], a[2], a[3])).collect();
        set_loss(&bb, logits, k, &matching, &gt, &labels, w, f).unwrap()
    };
    let base = eval(&boxes, &logits);
    let mut worst = 0.0f64;
    for i in 0..n {
        for c in 0..4 {
            let orig = boxes[i][c];
            boxes[i][c] = orig + FD_STEP;
            let up = eval(&boxes, &logits).total;
            boxes[i][c] = orig - FD_STEP;
            let down = eval(&boxes, &logits).total;
            boxes[i][c] = orig;
            worst = worst.max(rel_err(base.grad_boxes[i][c], (up - down) / (2.0 * FD_STEP), GRAD_FLOOR));
        }
    }
    for j in 0..logits.len() {
        let orig = logits[j];
        logits[j] = orig + FD_STEP;
        let up = eval(&boxes, &logits).total;
        logits[j] = orig - FD_STEP;
        let down = eval(&boxes, &logits).total;
        logits[j] = orig;
        worst = worst.max(rel_err(base.grad_logits[j], (up - down) / (2.0 * FD_STEP), GRAD_FLOOR));
    }
    worst
}

/// A random conditioning grid with the synthetic channel layout.
pub fn random_grid<R: Rng>(r: &mut R, channels: usize, size: usize) -> FeatureGrid {
    let mut f = FeatureGrid::zeros(channels, size, size);
    for v in f.data.iter_mut() {
        *v = r.random_range(0.0..1.0);
    }
    f
}

/// Worst relative error of parameter gradients of the full decoder forward
/// (every stage's boxes and logits, contracted with fixed random weights)
/// against central differences. Checks `per_param` entries of every
/// parameter tensor.
pub fn decoder_fd_error(seed: u64, per_param: usize) -> f64 {
    let mut r = rng::seeded(seed);
    let config = DecoderConfig { hidden_dim: 12, timestep_dim: 8, ..DecoderConfig::for_classes(3) };
    let mut dec = Decoder::new(config, &mut r).unwrap();
    // move away from the identity initialization so every path carries signal
    for id in dec.params().iter().map(|(id, _)| id).collect::<Vec<_>>() {
        for v in dec.params_mut().get_mut(id).value.data_mut() {
            *v += r.random_range(-0.2..0.2);
        }
    }
    let features = random_grid(&mut r, config.feature_channels, 8);
    let n = 5;
    let boxes: Vec<BoundingBox> = (0..n).map(|_| random_box(&mut r)).collect();
    let t = r.random_range(0..1000);
    let stages = config.num_stages;
    let wb: Vec<Vec<f64>> = (0..stages).map(|_| (0..n * 4).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let wl: Vec<Vec<f64>> = (0..stages).map(|_| (0..n * config.num_classes).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let objective = |dec: &Decoder| {
        let mut tape = Tape::new();
        let out = dec.forward(&mut tape, &features, &boxes, t).unwrap();
        let mut v = 0.0;
        for (s, nodes) in out.iter().enumerate() {
            v += tape.value(nodes.boxes).data().iter().zip(&wb[s]).map(|(a, b)| a * b).sum::<f64>();
            v += tape.value(nodes.logits).data().iter().zip(&wl[s]).map(|(a, b)| a * b).sum::<f64>();
        }
        v
    };
    let mut tape = Tape::new();
    let out = dec.forward(&mut tape, &features, &boxes, t).unwrap();
    let mut seeds = Vec::new();
    for (s, nodes) in out.iter().enumerate() {
        seeds.push((nodes.boxes, Tensor::matrix(n, 4, wb[s].clone()).unwrap()));
        seeds.push((nodes.logits, Tensor::matrix(n, config.num_classes, wl[s].clone()).unwrap()));
    }
    let root = tape.external_loss(objective(&dec), seeds).unwrap();
    dec.params_mut().zero_grad();
    tape.backward(root, dec.params_mut()).unwrap();
    let ids: Vec<_> = dec.params().iter().map(|(id, _)| id).collect();
    let mut worst = 0.0f64;
    for id in ids {
        let len = dec.params().value(id).len();
        for _ in 0..per_param.min(len) {
            let e = r.random_range(0..len);
            let analytic = dec.params().grad(id).data()[e];
            let orig = dec.params().value(id).data()[e];
            dec.params_mut().get_mut(id).value.data_mut()[e] = orig + FD_STEP;
            let up = objective(&dec);
            dec.params_mut().get_mut(id).value.data_mut()[e] = orig - FD_STEP;
            let down = objective(&dec);
            dec.params_mut().get_mut(id).value.data_mut()[e] = orig;
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP), GRAD_FLOOR));
        }
    }
    worst
}
