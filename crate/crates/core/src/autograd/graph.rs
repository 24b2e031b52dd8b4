//! Reverse-mode tape. Every op records its output value and enough of its
//! inputs to run the backward rule; nodes are appended in evaluation order so
//! the tape is already topologically sorted.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::adaformer::deform;
use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_raw, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    BroadcastAdd(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Sigmoid(Var),
    Softmax(Var, usize),
    Mean(Var, usize),
    Sum(Var, usize),
    SumAll(Var),
    Concat(Vec<Var>, usize),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    BceLogits(Var, Vec<f64>),
    SmoothL1 {
        x: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
        delta: f64,
    },
    Deform {
        raw: Var,
        rel: Vec<f64>,
        k: usize,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward pass over a parameter store.
pub struct Graph<'p> {
    nodes: Vec<Node>,
    params: &'p ParamStore,
    param_vars: Vec<Option<Var>>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s: Vec<usize> = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn smooth_l1_value(d: f64, delta: f64) -> f64 {
    let a = d.abs();
    if a < delta {
        0.5 * d * d / delta
    } else {
        a - 0.5 * delta
    }
}

fn smooth_l1_grad(d: f64, delta: f64) -> f64 {
    if d.abs() < delta {
        d / delta
    } else {
        d.signum()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            nodes: Vec::new(),
            params,
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let t = self.params.get(id).value.clone();
        let v = self.push(t, Op::Param, true);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        matmul_raw(ta.data(), tb.data(), n, k, m, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), ng))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "hadamard", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| x * c).collect(),
        )
        .expect("same shape");
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    /// Adds `b` to every trailing block of `a`; `b`'s shape must equal the
    /// trailing dims of `a`.
    pub fn broadcast_add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch("broadcast_add", ta, tb));
        }
        let bl = tb.len();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % bl])
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::BroadcastAdd(a, b), ng))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| f(x)).collect(),
        )
        .expect("same shape")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        let ng = self.ng(a);
        self.push(t, Op::Relu(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::exp);
        let ng = self.ng(a);
        self.push(t, Op::Exp(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        let ng = self.ng(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let (outer, len, inner) = ta.axis_split(axis)?;
        let x = ta.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for j in 0..len {
                    mx = mx.max(x[base + j * inner]);
                }
                let mut s = 0.0;
                for j in 0..len {
                    let e = (x[base + j * inner] - mx).exp();
                    out[base + j * inner] = e;
                    s += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= s;
                }
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), out)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Softmax(a, axis), ng))
    }

    fn reduce(&mut self, a: Var, axis: usize, scale_by_len: bool) -> Result<Tensor> {
        let ta = self.value(a);
        let (outer, len, inner) = ta.axis_split(axis)?;
        let x = ta.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if scale_by_len {
            let inv = 1.0 / len as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        Tensor::new(reduced_shape(ta.shape(), axis), out)
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.reduce(a, axis, true)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Mean(a, axis), ng))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.reduce(a, axis, false)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Sum(a, axis), ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or(Error::Empty("concat of zero tensors"))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(Error::InvalidArgument(format!(
                "concat axis {axis} for shape {s0:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != s0.len()
                || s.iter()
                    .zip(&s0)
                    .enumerate()
                    .any(|(d, (x, y))| d != axis && x != y)
            {
                return Err(mismatch("concat", self.value(*first), self.value(p)));
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let blk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat(parts.to_vec(), axis),
            ng,
        ))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.rows();
        if indices.is_empty() {
            return Err(Error::Empty("gather_rows indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidArgument(format!(
                "gather index {bad} out of range for {n} rows"
            )));
        }
        let r = ta.row_len();
        let mut data = Vec::with_capacity(indices.len() * r);
        for &i in indices {
            data.extend_from_slice(ta.row(i));
        }
        let mut shape = ta.shape().to_vec();
        shape[0] = indices.len();
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::GatherRows(a, indices.to_vec()),
            ng,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: t.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let loss: f64 = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits(logits, targets.to_vec()),
            ng,
        ))
    }

    /// `sum_i weight_i * smoothL1(x_i - target_i)` with transition point `delta`.
    pub fn smooth_l1(&mut self, x: Var, target: &[f64], weight: &[f64], delta: f64) -> Result<Var> {
        let t = self.value(x);
        if t.len() != target.len() || t.len() != weight.len() {
            return Err(Error::ShapeMismatch {
                op: "smooth_l1",
                lhs: t.shape().to_vec(),
                rhs: vec![target.len(), weight.len()],
            });
        }
        let loss = t
            .data()
            .iter()
            .zip(target)
            .zip(weight)
            .map(|((&a, &b), &w)| w * smooth_l1_value(a - b, delta))
            .sum();
        let ng = self.ng(x);
        let op = Op::SmoothL1 {
            x,
            target: target.to_vec(),
            weight: weight.to_vec(),
            delta,
        };
        Ok(self.push(Tensor::scalar(loss), op, ng))
    }

    /// Applies each center's deformation (built from its six raw regression
    /// outputs) to that center's `k` relative offsets.
    ///
    /// `raw` is `[m x 6]`, `rel` is `[m*k x 3]`; output is `[m*k x 3]`.
    pub fn deform_offsets(&mut self, raw: Var, rel: &Tensor, k: usize) -> Result<Var> {
        let tr = self.value(raw);
        if tr.shape().len() != 2 || tr.shape()[1] != 6 || rel.shape() != [tr.shape()[0] * k, 3] {
            return Err(mismatch("deform_offsets", tr, rel));
        }
        let m = tr.shape()[0];
        let mut out = vec![0.0; m * k * 3];
        for c in 0..m {
            let p = deform::DeformParams::from_raw(tr.row(c).try_into().expect("six raws"));
            let t = deform::build_transform(&p);
            for j in 0..k {
                let r = c * k + j;
                let v = t.apply(rel.row(r).try_into().expect("3d offset"));
                out[r * 3..r * 3 + 3].copy_from_slice(&v);
            }
        }
        let ng = self.ng(raw);
        let op = Op::Deform {
            raw,
            rel: rel.data().to_vec(),
            k,
        };
        Ok(self.push(Tensor::new(vec![m * k, 3], out)?, op, ng))
    }

    /// Hash of every discrete choice the tape made: ReLU signs, gathered rows,
    /// clamp states and loss targets/weights. Two evaluations with equal signatures
    /// lie on the same smooth piece of the computed function.
    pub fn signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let bits = |h: &mut DefaultHasher, v: &[f64]| v.iter().for_each(|x| x.to_bits().hash(h));
        for node in &self.nodes {
            node.value.shape().hash(&mut h);
            match &node.op {
                Op::Relu(x) => {
                    for v in self.nodes[x.0].value.data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::GatherRows(_, idx) => idx.hash(&mut h),
                Op::BceLogits(_, t) => bits(&mut h, t),
                Op::SmoothL1 { target, weight, .. } => {
                    bits(&mut h, target);
                    bits(&mut h, weight);
                }
                Op::Deform { raw, rel, .. } => {
                    bits(&mut h, rel);
                    let r = &self.nodes[raw.0].value;
                    for row in 0..r.rows() {
                        for a in 0..3 {
                            (r.row(row)[a].abs() < deform::LOG_SCALE_BOUND).hash(&mut h);
                        }
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Runs the reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        let out = node.value.data();
        match &node.op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |ga| {
                    // ga += g * b^T
                    for i in 0..n {
                        for p in 0..k {
                            let brow = &tb.data()[p * m..(p + 1) * m];
                            let grow = &g[i * m..(i + 1) * m];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    // gb += a^T * g
                    for i in 0..n {
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            let grow = &g[i * m..(i + 1) * m];
                            for (d, &x) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *d += av * x;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(d, x)| *d += x)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(d, x)| *d += x)
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(d, x)| *d += x)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(d, x)| *d -= x)
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * tb[i];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * ta[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(d, x)| *d += c * x)
            }),
            Op::BroadcastAdd(a, b) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(d, x)| *d += x)
                });
                let bl = self.value(*b).len();
                acc(*b, &mut |gb| {
                    for (i, x) in g.iter().enumerate() {
                        gb[i % bl] += x;
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i];
                }
            }),
            Op::Sigmoid(a) => acc(*a, &mut |ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = node.value.axis_split(*axis).expect("checked in forward");
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len)
                                .map(|j| g[base + j * inner] * out[base + j * inner])
                                .sum();
                            for j in 0..len {
                                let idx = base + j * inner;
                                ga[idx] += out[idx] * (g[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::Mean(a, axis) | Op::Sum(a, axis) => {
                let (outer, len, inner) = self
                    .value(*a)
                    .axis_split(*axis)
                    .expect("checked in forward");
                let s = if matches!(node.op, Op::Mean(..)) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                acc(*a, &mut |ga| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..len {
                            let dst = &mut ga[(o * len + j) * inner..(o * len + j + 1) * inner];
                            for (d, &x) in dst.iter_mut().zip(src) {
                                *d += s * x;
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|d| *d += g[0])),
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut off = 0;
                for &p in parts {
                    let blk = self.shape(p)[*axis] * inner;
                    acc(p, &mut |gp| {
                        for o in 0..outer {
                            let src = &g[o * total + off..o * total + off + blk];
                            for (d, &x) in gp[o * blk..(o + 1) * blk].iter_mut().zip(src) {
                                *d += x;
                            }
                        }
                    });
                    off += blk;
                }
            }
            Op::GatherRows(a, idx) => {
                let r = self.value(*a).row_len();
                acc(*a, &mut |ga| {
                    for (row, &i) in idx.iter().enumerate() {
                        let src = &g[row * r..(row + 1) * r];
                        for (d, &x) in ga[i * r..(i + 1) * r].iter_mut().zip(src) {
                            *d += x;
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |ga| {
                ga.iter_mut().zip(g).for_each(|(d, x)| *d += x)
            }),
            Op::BceLogits(a, targets) => {
                let x = self.value(*a).data();
                let n = targets.len() as f64;
                acc(*a, &mut |ga| {
                    for i in 0..x.len() {
                        ga[i] += g[0] * (sigmoid(x[i]) - targets[i]) / n;
                    }
                });
            }
            Op::SmoothL1 {
                x,
                target,
                weight,
                delta,
            } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for i in 0..xv.len() {
                        gx[i] += g[0] * weight[i] * smooth_l1_grad(xv[i] - target[i], *delta);
                    }
                });
            }
            Op::Deform { raw, rel, k } => {
                let tr = self.value(*raw);
                let m = tr.shape()[0];
                acc(*raw, &mut |gr| {
                    for c in 0..m {
                        let raws: [f64; 6] = tr.row(c).try_into().expect("six raws");
                        // dL/dT = sum_j g_j rel_j^T
                        let mut gt = [[0.0; 3]; 3];
                        for j in 0..*k {
                            let r = c * k + j;
                            for a in 0..3 {
                                for b in 0..3 {
                                    gt[a][b] += g[r * 3 + a] * rel[r * 3 + b];
                                }
                            }
                        }
                        let jac = deform::transform_jacobian(&raws);
                        for (p, dt) in jac.iter().enumerate() {
                            let mut s = 0.0;
                            for a in 0..3 {
                                for b in 0..3 {
                                    s += gt[a][b] * dt[a][b];
                                }
                            }
                            gr[c * 6 + p] += s;
                        }
                    }
                });
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v` (zeros if `v` did not contribute).
    pub fn wrt(&self, graph: &Graph<'_>, v: Var) -> Tensor {
        let shape = graph.shape(v).to_vec();
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Adds every parameter gradient into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (pid, var) in self.param_vars.iter().enumerate() {
            let Some(v) = var else { continue };
            if let Some(Some(g)) = self.grads.get(v.0) {
                let grad = store.grad_mut(ParamId::from_index(pid));
                grad.data_mut().iter_mut().zip(g).for_each(|(d, x)| *d += x);
            }
        }
    }
}
