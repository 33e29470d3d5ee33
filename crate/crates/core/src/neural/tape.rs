use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{matmul, matmul_nt, matmul_tn};
use super::{ParamId, ParamStore, Tensor, LAYERNORM_EPS};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

/// A differentiable operation defined outside the tape.
pub trait CustomOp {
    /// Gradients with respect to each input, given the gradient of the
    /// output. `None` means no contribution.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Constant,
    Variable,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, normalized: Vec<f64>, inv_std: Vec<f64> },
    Concat(Vec<NodeId>),
    Sum(NodeId),
    Custom { inputs: Vec<NodeId>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
///
/// Nodes are appended in evaluation order, so reverse recording order is a
/// valid topological order for the backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, node: NodeId) -> Option<&Tensor> {
        self.grads[node.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.nodes[node.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is reported in [`Gradients`] but not stored
    /// anywhere else.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Variable, true)
    }

    /// A leaf bound to a stored parameter; backward accumulates into it.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.shape()[0] {
            return Err(Error::shape("matmul", alloc::format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let (m, k, n) = (va.shape()[0], va.cols(), vb.cols());
        let value = Tensor::matrix(m, n, matmul(va.data(), vb.data(), m, k, n))?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Elementwise sum; `b` may also be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let same = va.shape() == vb.shape();
        let broadcast = vb.len() == va.cols() && vb.rows() == 1;
        if !same && !broadcast {
            return Err(Error::shape("add", alloc::format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let cols = va.cols();
        let mut value = va.clone();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x += if same { vb.data()[i] } else { vb.data()[i % cols] };
        }
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", alloc::format!("{:?} * {:?}", va.shape(), vb.shape())));
        }
        let mut value = va.clone();
        for (x, y) in value.data_mut().iter_mut().zip(vb.data()) {
            *x *= y;
        }
        let rg = self.requires(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.requires(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.requires(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| 0.5 * x * (1.0 + math::erf(x * core::f64::consts::FRAC_1_SQRT_2)));
        let rg = self.requires(&[a]);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(math::sigmoid);
        let rg = self.requires(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Normalizes each row to zero mean and unit variance, then applies the
    /// per-column `gain` and `bias`.
    pub fn layernorm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        let cols = vx.cols();
        if self.value(gain).len() != cols || self.value(bias).len() != cols {
            return Err(Error::shape(
                "layernorm",
                alloc::format!("{:?} with gain {:?}, bias {:?}", vx.shape(), self.value(gain).shape(), self.value(bias).shape()),
            ));
        }
        let rows = vx.rows();
        let mut normalized = Vec::with_capacity(vx.len());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / math::sqrt(var + LAYERNORM_EPS);
            inv_std.push(s);
            normalized.extend(row.iter().map(|v| (v - mean) * s));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let data = normalized.iter().enumerate().map(|(i, n)| n * g[i % cols] + b[i % cols]).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        let rg = self.requires(&[x, gain, bias]);
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, normalized, inv_std }, rg))
    }

    /// Concatenates along the last axis; all inputs need the same row count.
    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let rows = inputs.first().map(|&i| self.value(i).rows()).ok_or_else(|| Error::shape("concat", "no inputs"))?;
        if inputs.iter().any(|&i| self.value(i).rows() != rows) {
            return Err(Error::shape("concat", "inputs differ in row count"));
        }
        let total: usize = inputs.iter().map(|&i| self.value(i).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in inputs {
                data.extend_from_slice(self.value(i).row(r));
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        let rg = self.requires(inputs);
        Ok(self.push(value, Op::Concat(inputs.to_vec()), rg))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.requires(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor, op: Box<dyn CustomOp>) -> NodeId {
        let rg = self.requires(inputs);
        self.push(value, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    /// A scalar loss computed outside the tape, attached through its known
    /// gradients with respect to existing nodes.
    pub fn external_loss(&mut self, value: f64, seeds: Vec<(NodeId, Tensor)>) -> Result<NodeId> {
        for (node, grad) in &seeds {
            if self.value(*node).shape() != grad.shape() {
                return Err(Error::shape(
                    "external_loss",
                    alloc::format!("gradient {:?} for node of shape {:?}", grad.shape(), self.value(*node).shape()),
                ));
            }
        }
        let inputs: Vec<NodeId> = seeds.iter().map(|(n, _)| *n).collect();
        let grads = seeds.into_iter().map(|(_, g)| g).collect();
        Ok(self.custom(&inputs, Tensor::scalar(value), Box::new(SeededGradient(grads))))
    }

    /// Propagates d`loss` to every node and accumulates parameter gradients
    /// into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads, store);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>], store: &mut ParamStore) {
        let mut send = |id: NodeId, delta: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let shaped = |like: NodeId, data: Vec<f64>| {
            Tensor::new(self.value(like).shape().to_vec(), data).expect("gradient shape follows its node")
        };
        match &node.op {
            Op::Constant | Op::Variable => {}
            Op::Param(id) => store.accumulate_grad(*id, g),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.cols(), vb.cols());
                if self.nodes[a.0].requires_grad {
                    send(*a, shaped(*a, matmul_nt(g.data(), vb.data(), m, n, k)));
                }
                if self.nodes[b.0].requires_grad {
                    send(*b, shaped(*b, matmul_tn(va.data(), g.data(), m, k, n)));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                let vb = self.value(*b);
                if vb.len() == g.len() {
                    send(*b, shaped(*b, g.data().to_vec()));
                } else {
                    let cols = vb.len();
                    let mut acc = vec![0.0; cols];
                    for (i, x) in g.data().iter().enumerate() {
                        acc[i % cols] += x;
                    }
                    send(*b, shaped(*b, acc));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, shaped(*a, g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect()));
                send(*b, shaped(*b, g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect()));
            }
            Op::Scale(a, f) => send(*a, g.map(|x| x * f)),
            Op::Relu(a) => {
                let va = self.value(*a);
                send(*a, shaped(*a, g.data().iter().zip(va.data()).map(|(d, &x)| if x > 0.0 { *d } else { 0.0 }).collect()));
            }
            Op::Gelu(a) => {
                let va = self.value(*a);
                let inv_root_2pi = 0.5 * core::f64::consts::FRAC_2_SQRT_PI * core::f64::consts::FRAC_1_SQRT_2;
                let data = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(d, &x)| {
                        let cdf = 0.5 * (1.0 + math::erf(x * core::f64::consts::FRAC_1_SQRT_2));
                        let pdf = inv_root_2pi * math::exp(-0.5 * x * x);
                        d * (cdf + x * pdf)
                    })
                    .collect();
                send(*a, shaped(*a, data));
            }
            Op::Sigmoid(a) => {
                let data = g.data().iter().zip(node.value.data()).map(|(d, s)| d * s * (1.0 - s)).collect();
                send(*a, shaped(*a, data));
            }
            Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                let cols = self.value(*x).cols();
                let gv = self.value(*gain).data();
                let mut d_gain = vec![0.0; cols];
                let mut d_bias = vec![0.0; cols];
                let mut dx = vec![0.0; g.len()];
                for (r, s) in inv_std.iter().enumerate() {
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let nr = &normalized[r * cols..(r + 1) * cols];
                    let mut mean_dy = 0.0;
                    let mut mean_dy_n = 0.0;
                    for c in 0..cols {
                        d_gain[c] += gr[c] * nr[c];
                        d_bias[c] += gr[c];
                        let dy = gr[c] * gv[c];
                        mean_dy += dy;
                        mean_dy_n += dy * nr[c];
                    }
                    mean_dy /= cols as f64;
                    mean_dy_n /= cols as f64;
                    for c in 0..cols {
                        dx[r * cols + c] = s * (gr[c] * gv[c] - mean_dy - nr[c] * mean_dy_n);
                    }
                }
                send(*x, shaped(*x, dx));
                send(*gain, shaped(*gain, d_gain));
                send(*bias, shaped(*bias, d_bias));
            }
            Op::Concat(inputs) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &i in inputs {
                    let c = self.value(i).cols();
                    if self.nodes[i.0].requires_grad {
                        let mut data = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        send(i, shaped(i, data));
                    }
                    offset += c;
                }
            }
            Op::Sum(a) => {
                let d = g.data()[0];
                send(*a, self.value(*a).map(|_| d));
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
                for (&i, d) in inputs.iter().zip(op.backward(&values, &node.value, g)) {
                    if let Some(d) = d {
                        send(i, d);
                    }
                }
            }
        }
    }
}

struct SeededGradient(Vec<Tensor>);

impl CustomOp for SeededGradient {
    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_output: &Tensor) -> Vec<Option<Tensor>> {
        let d = grad_output.data()[0];
        self.0.iter().map(|g| Some(g.map(|x| x * d))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random(shape: &[usize], r: &mut rng::DetRng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn relu_of_negative_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(alloc::vec![-1.0, -0.5, -3.0]));
        let y = tape.relu(x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_by_identity() {
        let mut r = rng::seeded(1);
        let mut tape = Tape::new();
        let xv = random(&[3, 4], &mut r);
        let x = tape.constant(xv.clone());
        let i = tape.constant(Tensor::identity(4));
        let y = tape.matmul(x, i).unwrap();
        assert_eq!(tape.value(y), &xv);
        let bad = tape.constant(Tensor::identity(3));
        assert!(tape.matmul(x, bad).is_err());
    }

    #[test]
    fn layernorm_rows_are_standardized() {
        let mut r = rng::seeded(2);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[5, 16], &mut r));
        let g = tape.constant(Tensor::filled(&[16], 1.0));
        let b = tape.constant(Tensor::zeros(&[16]));
        let y = tape.layernorm(x, g, b).unwrap();
        let out = tape.value(y);
        for row in 0..5 {
            let v = out.row(row);
            let mean = v.iter().sum::<f64>() / 16.0;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9);
            // the variance epsilon shrinks the result slightly below 1
            let raw_var = {
                let xr = tape.value(x).row(row);
                let m = xr.iter().sum::<f64>() / 16.0;
                xr.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 16.0
            };
            assert!((var - raw_var / (raw_var + LAYERNORM_EPS)).abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn sum_of_param_has_unit_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::zeros(&[2, 3]));
        let mut tape = Tape::new();
        let p = tape.param(&store, id);
        let s = tape.sum(p);
        tape.backward(s, &mut store).unwrap();
        assert_eq!(store.grad(id).data(), &[1.0; 6]);
    }

    #[test]
    fn squared_norm_of_linear_map() {
        // loss = ||W x||^2, dloss/dW = 2 (W x) x^T
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::matrix(2, 3, alloc::vec![1.0, 2.0, 0.5, -1.0, 0.0, 3.0]).unwrap());
        let xv = [0.5, -1.0, 2.0];
        let mut tape = Tape::new();
        let wn = tape.param(&store, w);
        let x = tape.constant(Tensor::matrix(3, 1, xv.to_vec()).unwrap());
        let y = tape.matmul(wn, x).unwrap();
        let sq = tape.mul(y, y).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss, &mut store).unwrap();
        let wx = [1.0 * 0.5 - 2.0 + 0.5 * 2.0, -0.5 + 6.0];
        let mut expected = alloc::vec::Vec::new();
        for r in 0..2 {
            for c in 0..3 {
                expected.push(2.0 * wx[r] * xv[c]);
            }
        }
        assert_eq!(store.grad(w).data(), expected.as_slice());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::zeros(&[2]));
        assert_eq!(tape.backward(x, &mut store).err(), Some(Error::NonScalarLoss(alloc::vec![2])));
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        let c = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
        assert!(tape.layernorm(a, c, c).is_err());
        assert!(tape.concat(&[a, b]).is_err());
        assert!(tape.concat(&[]).is_err());
        assert!(tape.external_loss(0.0, alloc::vec![(a, Tensor::zeros(&[3]))]).is_err());
    }

    /// Every primitive against central finite differences on a composed
    /// scalar function of a variable input.
    #[test]
    fn primitives_match_finite_differences() {
        type Build = fn(&mut Tape, NodeId, &[NodeId]) -> NodeId;
        let cases: &[(&str, Build)] = &[
            ("matmul", |t, x, p| t.matmul(x, p[0]).unwrap()),
            ("add-broadcast", |t, x, p| t.add(x, p[1]).unwrap()),
            ("mul", |t, x, _| t.mul(x, x).unwrap()),
            ("scale", |t, x, _| t.scale(x, -2.5)),
            ("relu", |t, x, _| t.relu(x)),
            ("gelu", |t, x, _| t.gelu(x)),
            ("sigmoid", |t, x, _| t.sigmoid(x)),
            ("layernorm", |t, x, p| t.layernorm(x, p[2], p[3]).unwrap()),
            ("concat", |t, x, _| {
                let y = t.gelu(x);
                t.concat(&[x, y]).unwrap()
            }),
        ];
        let mut r = rng::seeded(17);
        for (name, build) in cases {
            for _ in 0..5 {
                let xv = random(&[3, 4], &mut r);
                let pv = [random(&[4, 4], &mut r), random(&[4], &mut r), random(&[4], &mut r), random(&[4], &mut r)];
                let weights = random(&[3, 8], &mut r);
                let eval = |xv: &Tensor| -> (f64, Option<Tensor>) {
                    let mut tape = Tape::new();
                    let mut store = ParamStore::new();
                    let x = tape.variable(xv.clone());
                    let p: alloc::vec::Vec<NodeId> = pv.iter().map(|v| tape.constant(v.clone())).collect();
                    let y = build(&mut tape, x, &p);
                    let cols = tape.value(y).cols();
                    let w = tape.constant(Tensor::matrix(3, cols, weights.data()[..3 * cols].to_vec()).unwrap());
                    let prod = tape.mul(y, w).unwrap();
                    let loss = tape.sum(prod);
                    let grads = tape.backward(loss, &mut store).unwrap();
                    (tape.value(loss).data()[0], grads.get(x).cloned())
                };
                let (_, g) = eval(&xv);
                let g = g.unwrap();
                let h = 1e-5;
                for i in 0..xv.len() {
                    let mut hi = xv.clone();
                    let mut lo = xv.clone();
                    hi.data_mut()[i] += h;
                    lo.data_mut()[i] -= h;
                    let fd = (eval(&hi).0 - eval(&lo).0) / (2.0 * h);
                    let a = g.data()[i];
                    let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
                    assert!(err < 1e-4 || (fd - a).abs() < 1e-9, "{name}[{i}]: analytic {a} vs fd {fd}");
                }
            }
        }
    }

    #[test]
    fn layernorm_parameter_gradients() {
        let mut r = rng::seeded(23);
        let xv = random(&[4, 6], &mut r);
        let wv = random(&[4, 6], &mut r);
        let mut store = ParamStore::new();
        let gid = store.add("g", random(&[6], &mut r));
        let bid = store.add("b", random(&[6], &mut r));
        let loss_of = |store: &mut ParamStore, backward: bool| {
            let mut tape = Tape::new();
            let x = tape.constant(xv.clone());
            let g = tape.param(store, gid);
            let b = tape.param(store, bid);
            let y = tape.layernorm(x, g, b).unwrap();
            let w = tape.constant(wv.clone());
            let p = tape.mul(y, w).unwrap();
            let p = tape.gelu(p);
            let l = tape.sum(p);
            if backward {
                tape.backward(l, store).unwrap();
            }
            tape.value(l).data()[0]
        };
        loss_of(&mut store, true);
        let h = 1e-5;
        for id in [gid, bid] {
            let analytic = store.grad(id).clone();
            for i in 0..6 {
                let orig = store.value(id).data()[i];
                store.get_mut(id).value.data_mut()[i] = orig + h;
                let hi = loss_of(&mut store, false);
                store.get_mut(id).value.data_mut()[i] = orig - h;
                let lo = loss_of(&mut store, false);
                store.get_mut(id).value.data_mut()[i] = orig;
                let fd = (hi - lo) / (2.0 * h);
                let a = analytic.data()[i];
                assert!((fd - a).abs() / fd.abs().max(a.abs()).max(1e-8) < 1e-4, "{fd} vs {a}");
            }
        }
    }
}
