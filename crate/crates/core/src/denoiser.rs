//! The box decoder: given noisy boxes, a timestep and a conditioning feature
//! grid, predict clean boxes and class logits.
//!
//! [`Decoder`] is the trainable cascaded head. Each stage pools features
//! inside its input boxes, concatenates them with the box coordinates and a
//! timestep embedding, runs a two-layer MLP with layer normalization and
//! emits a box delta plus class logits. Boxes are processed independently.
//! [`OracleDecoder`] is a ground-truth-aware test double with the same
//! interface.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::corruption::{scale_signal, unscale_signal};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, MIN_SIDE};
use crate::math;
use crate::neural::{timestep_embedding, CustomOp, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::synthdata::Scene;

/// Conditioning features, `channels x height x width`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }
}

/// Continuous sampling position on one axis: lower site, upper site, weight of
/// the upper site, and d(position in sites)/d(normalized coordinate) (zero
/// when clamped to the border).
fn axis_sample(coord: f64, size: usize) -> (usize, usize, f64, f64) {
    let pos = coord * size as f64 - 0.5;
    let max = (size - 1) as f64;
    if size == 1 || pos <= 0.0 {
        return (0, 0, 0.0, 0.0);
    }
    if pos >= max {
        return (size - 1, size - 1, 0.0, 0.0);
    }
    let lo = math::floor(pos);
    let i = lo as usize;
    (i, i + 1, pos - lo, size as f64)
}

/// Offsets of the pooling lattice inside a unit box: cell centers of a
/// `pool x pool` partition, relative to the box center.
fn lattice_offset(i: usize, pool: usize) -> f64 {
    (i as f64 + 0.5) / pool as f64 - 0.5
}

/// Bilinear samples on a `pool x pool` lattice of cell centers inside `b`,
/// flattened channel-major: index `c * pool^2 + iy * pool + ix`.
pub fn roi_pool(features: &FeatureGrid, b: BoundingBox, pool: usize) -> Vec<f64> {
    let mut out = vec![0.0; features.channels * pool * pool];
    roi_pool_into(features, b, pool, &mut out, None);
    out
}

/// Shared by the forward pass and the gradient. When `grad` is given it holds
/// d(loss)/d(output) and receives d(loss)/d(box) instead of writing `out`.
fn roi_pool_into(
    f: &FeatureGrid,
    b: BoundingBox,
    pool: usize,
    out: &mut [f64],
    mut grad: Option<&mut [f64; 4]>,
) {
    let cells = pool * pool;
    for iy in 0..pool {
        let oy = lattice_offset(iy, pool);
        let (y0, y1, wy, dy_scale) = axis_sample(b.cy + oy * b.h, f.height);
        for ix in 0..pool {
            let ox = lattice_offset(ix, pool);
            let (x0, x1, wx, dx_scale) = axis_sample(b.cx + ox * b.w, f.width);
            for c in 0..f.channels {
                let v00 = f.at(c, y0, x0);
                let v01 = f.at(c, y0, x1);
                let v10 = f.at(c, y1, x0);
                let v11 = f.at(c, y1, x1);
                let idx = c * cells + iy * pool + ix;
                match grad.as_deref_mut() {
                    None => {
                        let top = v00 + wx * (v01 - v00);
                        let bottom = v10 + wx * (v11 - v10);
                        out[idx] = top + wy * (bottom - top);
                    }
                    Some(g) => {
                        let go = out[idx];
                        if go == 0.0 {
                            continue;
                        }
                        let d_dx = ((1.0 - wy) * (v01 - v00) + wy * (v11 - v10)) * dx_scale;
                        let d_dy = ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01)) * dy_scale;
                        g[0] += go * d_dx;
                        g[2] += go * d_dx * ox;
                        g[1] += go * d_dy;
                        g[3] += go * d_dy * oy;
                    }
                }
            }
        }
    }
}

struct RoiPoolOp {
    features: FeatureGrid,
    pool: usize,
}

impl CustomOp for RoiPoolOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let boxes = inputs[0];
        let width = grad_output.cols();
        let mut d = vec![0.0; boxes.len()];
        for r in 0..boxes.rows() {
            let b = BoundingBox::from_array(row4(boxes.row(r)));
            let mut g = [0.0; 4];
            // roi_pool_into reads the upstream gradient from `out` in grad mode
            let mut upstream = grad_output.data()[r * width..(r + 1) * width].to_vec();
            roi_pool_into(&self.features, b, self.pool, &mut upstream, Some(&mut g));
            d[r * 4..r * 4 + 4].copy_from_slice(&g);
        }
        vec![Some(Tensor::new(boxes.shape().to_vec(), d).expect("same shape as boxes"))]
    }
}

/// Clamps box rows into the valid range; the gradient passes through
/// unclamped components only.
struct ClampBoxOp;

fn clamp_limits(k: usize) -> (f64, f64) {
    if k < 2 {
        (0.0, 1.0)
    } else {
        (MIN_SIDE, 1.0)
    }
}

impl CustomOp for ClampBoxOp {
    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad_output.data())
            .enumerate()
            .map(|(i, (&x, &g))| {
                let (lo, hi) = clamp_limits(i % 4);
                if x > lo && x < hi {
                    g
                } else {
                    0.0
                }
            })
            .collect();
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), data).expect("same shape"))]
    }
}

fn row4(r: &[f64]) -> [f64; 4] {
    [r[0], r[1], r[2], r[3]]
}

fn record_roi_pool(tape: &mut Tape, boxes: NodeId, features: &FeatureGrid, pool: usize) -> NodeId {
    let bv = tape.value(boxes);
    let width = features.channels * pool * pool;
    let mut data = Vec::with_capacity(bv.rows() * width);
    for r in 0..bv.rows() {
        data.extend(roi_pool(features, BoundingBox::from_array(row4(bv.row(r))), pool));
    }
    let value = Tensor::matrix(bv.rows(), width, data).expect("pooled shape");
    tape.custom(&[boxes], value, Box::new(RoiPoolOp { features: features.clone(), pool }))
}

fn record_clamp(tape: &mut Tape, boxes: NodeId) -> NodeId {
    let bv = tape.value(boxes);
    let mut value = bv.clone();
    for (i, x) in value.data_mut().iter_mut().enumerate() {
        let (lo, hi) = clamp_limits(i % 4);
        *x = if x.is_nan() { lo } else { x.clamp(lo, hi) };
    }
    tape.custom(&[boxes], value, Box::new(ClampBoxOp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderConfig {
    pub num_stages: usize,
    pub hidden_dim: usize,
    pub pool_size: usize,
    pub num_classes: usize,
    pub timestep_dim: usize,
    /// Channels of the conditioning grid.
    pub feature_channels: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self::for_classes(3)
    }
}

impl DecoderConfig {
    /// Defaults for a dataset with `num_classes` classes, whose rasterized
    /// grids carry `num_classes + 2` channels.
    pub fn for_classes(num_classes: usize) -> Self {
        Self { num_stages: 2, hidden_dim: 128, pool_size: 3, num_classes, timestep_dim: 64, feature_channels: num_classes + 2 }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_stages", self.num_stages),
            ("hidden_dim", self.hidden_dim),
            ("pool_size", self.pool_size),
            ("num_classes", self.num_classes),
            ("timestep_dim", self.timestep_dim),
            ("feature_channels", self.feature_channels),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("decoder {name} must be positive")));
        }
        if !self.timestep_dim.is_multiple_of(2) {
            return Err(Error::config("decoder timestep_dim must be even"));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.feature_channels * self.pool_size * self.pool_size + 4 + self.timestep_dim
    }
}

/// Prediction for one set of boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    /// Final-stage boxes in signal space.
    pub boxes: Vec<[f64; 4]>,
    /// `N x num_classes`, row-major.
    pub logits: Vec<f64>,
    pub num_classes: usize,
    /// Every stage's boxes (image space) and logits, first stage first.
    pub stages: Vec<StageOutput>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub boxes: Vec<BoundingBox>,
    pub logits: Vec<f64>,
}

impl DecoderOutput {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn logits_of(&self, i: usize) -> &[f64] {
        &self.logits[i * self.num_classes..(i + 1) * self.num_classes]
    }
}

/// Anything that maps `(z_t, t)` to a clean-box prediction.
pub trait Denoiser {
    fn num_classes(&self) -> usize;

    fn denoise(&self, features: &FeatureGrid, z_t: &[[f64; 4]], t: i64, scale: f64) -> Result<DecoderOutput>;
}

#[derive(Debug, Clone, Copy)]
struct StageParams {
    fc1_w: ParamId,
    fc1_b: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    box_w: ParamId,
    box_b: ParamId,
    cls_w: ParamId,
    cls_b: ParamId,
}

/// Tape nodes of one recorded stage.
#[derive(Debug, Clone, Copy)]
pub struct StageNodes {
    /// `N x 4` image-space boxes, clamped.
    pub boxes: NodeId,
    /// `N x num_classes`.
    pub logits: NodeId,
}

/// The reference cascaded decoder and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    config: DecoderConfig,
    params: ParamStore,
}

fn stage_param_shapes(config: &DecoderConfig, s: usize) -> [(alloc::string::String, [usize; 2]); 12] {
    let h = config.hidden_dim;
    let d = config.input_dim();
    let k = config.num_classes;
    let n = |part: &str| format!("stage{s}.{part}");
    [
        (n("fc1.weight"), [d, h]),
        (n("fc1.bias"), [1, h]),
        (n("ln1.gain"), [1, h]),
        (n("ln1.bias"), [1, h]),
        (n("fc2.weight"), [h, h]),
        (n("fc2.bias"), [1, h]),
        (n("ln2.gain"), [1, h]),
        (n("ln2.bias"), [1, h]),
        (n("box.weight"), [h, 4]),
        (n("box.bias"), [1, 4]),
        (n("cls.weight"), [h, k]),
        (n("cls.bias"), [1, k]),
    ]
}

impl Decoder {
    /// Fresh parameters: uniform Xavier-style hidden layers, unit layer-norm
    /// gains, and zeroed box/class heads so every stage starts as the
    /// identity on boxes with zero logits.
    pub fn new<R: Rng + ?Sized>(config: DecoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for s in 0..config.num_stages {
            for (name, [rows, cols]) in stage_param_shapes(&config, s) {
                let size = rows * cols;
                let data = if name.ends_with("fc1.weight") || name.ends_with("fc2.weight") {
                    let bound = math::sqrt(6.0 / (rows + cols) as f64);
                    (0..size).map(|_| rng.random_range(-bound..bound)).collect()
                } else if name.contains(".ln") && name.ends_with("gain") {
                    vec![1.0; size]
                } else {
                    vec![0.0; size]
                };
                params.add(name, Tensor::matrix(rows, cols, data)?);
            }
        }
        Ok(Self { config, params })
    }

    /// Wraps loaded parameters, checking that every expected tensor is
    /// present with the right shape.
    pub fn from_params(config: DecoderConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut expected = 0;
        for s in 0..config.num_stages {
            for (name, [rows, cols]) in stage_param_shapes(&config, s) {
                let id = params.id(&name).ok_or_else(|| Error::config(format!("missing parameter {name}")))?;
                let shape = params.value(id).shape();
                if shape != [rows, cols] {
                    return Err(Error::config(format!("parameter {name} has shape {shape:?}, expected [{rows}, {cols}]")));
                }
                expected += 1;
            }
        }
        if params.len() != expected {
            return Err(Error::config(format!("{} parameters present, {expected} expected", params.len())));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn stage_ids(&self, s: usize) -> StageParams {
        let id = |part: &str| self.params.id(&format!("stage{s}.{part}")).expect("validated at construction");
        StageParams {
            fc1_w: id("fc1.weight"),
            fc1_b: id("fc1.bias"),
            ln1_g: id("ln1.gain"),
            ln1_b: id("ln1.bias"),
            fc2_w: id("fc2.weight"),
            fc2_b: id("fc2.bias"),
            ln2_g: id("ln2.gain"),
            ln2_b: id("ln2.bias"),
            box_w: id("box.weight"),
            box_b: id("box.bias"),
            cls_w: id("cls.weight"),
            cls_b: id("cls.bias"),
        }
    }

    /// Records one stage on `tape`.
    pub fn decode_stage(&self, tape: &mut Tape, stage: usize, features: &FeatureGrid, boxes_in: NodeId, t: i64) -> Result<StageNodes> {
        if features.channels != self.config.feature_channels {
            return Err(Error::shape(
                "decode_stage",
                format!("grid has {} channels, decoder expects {}", features.channels, self.config.feature_channels),
            ));
        }
        let p = self.stage_ids(stage);
        let n = tape.value(boxes_in).rows();
        let emb = timestep_embedding(t, self.config.timestep_dim);
        let emb_rows: Vec<f64> = (0..n).flat_map(|_| emb.data().iter().copied()).collect();
        let emb = tape.constant(Tensor::matrix(n, self.config.timestep_dim, emb_rows)?);

        let pooled = record_roi_pool(tape, boxes_in, features, self.config.pool_size);
        let x = tape.concat(&[pooled, boxes_in, emb])?;

        let h = self.dense(tape, x, p.fc1_w, p.fc1_b)?;
        let g = tape.param(&self.params, p.ln1_g);
        let b = tape.param(&self.params, p.ln1_b);
        let h = tape.layernorm(h, g, b)?;
        let h = tape.gelu(h);

        let h = self.dense(tape, h, p.fc2_w, p.fc2_b)?;
        let g = tape.param(&self.params, p.ln2_g);
        let b = tape.param(&self.params, p.ln2_b);
        let h = tape.layernorm(h, g, b)?;
        let h = tape.gelu(h);

        let delta = self.dense(tape, h, p.box_w, p.box_b)?;
        let logits = self.dense(tape, h, p.cls_w, p.cls_b)?;
        let moved = tape.add(boxes_in, delta)?;
        let boxes = record_clamp(tape, moved);
        Ok(StageNodes { boxes, logits })
    }

    fn dense(&self, tape: &mut Tape, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let w = tape.param(&self.params, w);
        let b = tape.param(&self.params, b);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    /// Records the full cascade from image-space boxes; each stage consumes
    /// the previous stage's boxes.
    pub fn forward(&self, tape: &mut Tape, features: &FeatureGrid, boxes: &[BoundingBox], t: i64) -> Result<Vec<StageNodes>> {
        if boxes.is_empty() {
            return Err(Error::shape("decode", "at least one box is required"));
        }
        let rows: Vec<[f64; 4]> = boxes.iter().map(|b| b.to_array()).collect();
        let mut current = tape.constant(Tensor::from_rows(&rows)?);
        let mut stages = Vec::with_capacity(self.config.num_stages);
        for s in 0..self.config.num_stages {
            let out = self.decode_stage(tape, s, features, current, t)?;
            current = out.boxes;
            stages.push(out);
        }
        Ok(stages)
    }

    /// Inference: unscale `z_t`, run every stage and re-express the final
    /// boxes in signal space.
    pub fn decode(&self, features: &FeatureGrid, z_t: &[[f64; 4]], t: i64, scale: f64) -> Result<DecoderOutput> {
        let boxes: Vec<BoundingBox> = z_t.iter().map(|z| unscale_signal(*z, scale)).collect();
        let mut tape = Tape::new();
        let nodes = self.forward(&mut tape, features, &boxes, t)?;
        let stages: Vec<StageOutput> = nodes
            .iter()
            .map(|s| StageOutput {
                boxes: tape.value(s.boxes).data().chunks_exact(4).map(|c| BoundingBox::from_array(row4(c))).collect(),
                logits: tape.value(s.logits).data().to_vec(),
            })
            .collect();
        let last = stages.last().expect("at least one stage");
        Ok(DecoderOutput {
            boxes: last.boxes.iter().map(|b| scale_signal(*b, scale)).collect(),
            logits: last.logits.clone(),
            num_classes: self.config.num_classes,
            stages,
        })
    }
}

impl Denoiser for Decoder {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn denoise(&self, features: &FeatureGrid, z_t: &[[f64; 4]], t: i64, scale: f64) -> Result<DecoderOutput> {
        self.decode(features, z_t, t, scale)
    }
}

/// Logit magnitude used by the oracle for saturated class scores.
pub const ORACLE_LOGIT: f64 = 20.0;

/// Test double that snaps every input box to a ground-truth box.
///
/// Each ground-truth box first claims a distinct input box (globally closest
/// pairs by center distance first), so every object is covered whenever there
/// are at least as many inputs as objects; leftover inputs snap to their
/// nearest object.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDecoder {
    boxes: Vec<BoundingBox>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl OracleDecoder {
    pub fn new(scene: &Scene) -> Self {
        Self { boxes: scene.boxes.clone(), labels: scene.labels.clone(), num_classes: scene.num_classes }
    }

    fn assign(&self, inputs: &[BoundingBox]) -> Vec<usize> {
        let n = inputs.len();
        let g = self.boxes.len();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * g);
        for (i, b) in inputs.iter().enumerate() {
            for (j, gt) in self.boxes.iter().enumerate() {
                pairs.push((b.center_distance_sq(*gt), i, j));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut target: Vec<Option<usize>> = vec![None; n];
        let mut claimed = vec![false; g];
        let mut remaining = g.min(n);
        for &(_, i, j) in &pairs {
            if remaining == 0 {
                break;
            }
            if target[i].is_none() && !claimed[j] {
                target[i] = Some(j);
                claimed[j] = true;
                remaining -= 1;
            }
        }
        inputs
            .iter()
            .zip(target)
            .map(|(b, t)| {
                t.unwrap_or_else(|| {
                    (0..g)
                        .min_by(|&x, &y| b.center_distance_sq(self.boxes[x]).total_cmp(&b.center_distance_sq(self.boxes[y])).then(x.cmp(&y)))
                        .expect("non-empty ground truth")
                })
            })
            .collect()
    }
}

impl Denoiser for OracleDecoder {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn denoise(&self, _features: &FeatureGrid, z_t: &[[f64; 4]], _t: i64, scale: f64) -> Result<DecoderOutput> {
        let k = self.num_classes;
        let mut logits = vec![-ORACLE_LOGIT; z_t.len() * k];
        if self.boxes.is_empty() {
            let boxes: Vec<BoundingBox> = z_t.iter().map(|z| unscale_signal(*z, scale)).collect();
            return Ok(DecoderOutput {
                boxes: z_t.to_vec(),
                stages: vec![StageOutput { boxes, logits: logits.clone() }],
                logits,
                num_classes: k,
            });
        }
        let inputs: Vec<BoundingBox> = z_t.iter().map(|z| unscale_signal(*z, scale)).collect();
        let targets = self.assign(&inputs);
        let boxes: Vec<BoundingBox> = targets.iter().map(|&j| self.boxes[j]).collect();
        for (i, &j) in targets.iter().enumerate() {
            logits[i * k + self.labels[j]] = ORACLE_LOGIT;
        }
        Ok(DecoderOutput {
            boxes: boxes.iter().map(|b| scale_signal(*b, scale)).collect(),
            stages: vec![StageOutput { boxes, logits: logits.clone() }],
            logits,
            num_classes: k,
        })
    }
}
