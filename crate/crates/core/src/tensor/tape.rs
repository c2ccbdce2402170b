//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and whatever it needs
//! for the backward pass. [`Tape::backward`] consumes the tape, visiting nodes
//! in exact reverse recording order.

use std::collections::HashMap;

use serde::Serialize;

use super::kernels::{self, Conv2dGeometry};
use super::{Mode, ParamId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Registry of differentiable operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv2d,
    BatchNorm2d,
    Relu,
    Add,
    Dense,
    GlobalAvgPool,
    Softmax,
    WeightedMixture,
    LogSoftmaxNll,
    WeightedSum,
}

impl OpKind {
    pub const ALL: [OpKind; 10] = [
        OpKind::Conv2d,
        OpKind::BatchNorm2d,
        OpKind::Relu,
        OpKind::Add,
        OpKind::Dense,
        OpKind::GlobalAvgPool,
        OpKind::Softmax,
        OpKind::WeightedMixture,
        OpKind::LogSoftmaxNll,
        OpKind::WeightedSum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::BatchNorm2d => "batchnorm2d",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Dense => "dense",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Softmax => "softmax",
            OpKind::WeightedMixture => "weighted_mixture",
            OpKind::LogSoftmaxNll => "log_softmax_nll",
            OpKind::WeightedSum => "weighted_sum",
        }
    }
}

enum Op<T> {
    Input,
    Leaf,
    Param(ParamId),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: Conv2dGeometry },
    BatchNorm { input: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, train: bool },
    Relu { input: Var },
    Add { lhs: Var, rhs: Var },
    Dense { input: Var, weight: Var, bias: Var },
    GlobalAvgPool { input: Var },
    Softmax { input: Var },
    WeightedMixture { experts: Vec<Var>, gates: Var },
    LogSoftmaxNll { logits: Var, labels: Vec<usize> },
    WeightedSum { input: Var, weights: Vec<T> },
}

impl<T> Op<T> {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Input | Op::Leaf | Op::Param(_) => return None,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::BatchNorm { .. } => OpKind::BatchNorm2d,
            Op::Relu { .. } => OpKind::Relu,
            Op::Add { .. } => OpKind::Add,
            Op::Dense { .. } => OpKind::Dense,
            Op::GlobalAvgPool { .. } => OpKind::GlobalAvgPool,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::WeightedMixture { .. } => OpKind::WeightedMixture,
            Op::LogSoftmaxNll { .. } => OpKind::LogSoftmaxNll,
            Op::WeightedSum { .. } => OpKind::WeightedSum,
        })
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of the leaves created with [`Tape::leaf`].
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Kinds of the ops recorded so far, in order.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().filter_map(|n| n.op.kind()).collect()
    }

    /// Hash of the sign pattern (`x > 0`) of every ReLU input on the tape.
    /// Two evaluations with equal signatures lie on the same linear piece of
    /// every ReLU.
    pub fn relu_signature(&self) -> u64 {
        let mut h = crate::rng::fnv1a(b"relu");
        for node in &self.nodes {
            if let Op::Relu { input } = node.op {
                for (i, &v) in self.value(input).data().iter().enumerate() {
                    if v > T::zero() {
                        h = crate::rng::mix64(h ^ i as u64);
                    }
                }
                h = crate::rng::mix64(h ^ 0x5eed);
            }
        }
        h
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant input (no gradient is computed for it).
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A free variable whose gradient is returned by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records the current value of a parameter; backward accumulates into
    /// its `grad`.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        self.push(params.get(id).value.clone(), Op::Param(id), true)
    }

    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let geom = Conv2dGeometry::new(x.dims4("conv2d")?, w.dims4("conv2d")?, stride, pad)?;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [geom.c_out] {
                return Err(Error::shape("conv2d", format!("bias shape {bs:?} != [{}]", geom.c_out)));
            }
        }
        let mut out = Tensor::zeros(&geom.out_shape());
        kernels::conv2d_forward(&geom, x.data(), w.data(), bias.map(|b| self.value(b).data()), out.data_mut());
        let rg = self.needs(&[input, weight]) || bias.is_some_and(|b| self.needs(&[b]));
        Ok(self.push(out, Op::Conv2d { input, weight, bias, geom }, rg))
    }

    /// Per-channel batch normalization over (N, H, W).
    ///
    /// In train mode the batch statistics normalize the input and are folded
    /// into the running estimates as `r ← (1 − momentum)·r + momentum·batch`
    /// (unbiased variance for the running estimate). In eval mode the running
    /// estimates are used as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        mode: Mode,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let x = self.value(input);
        let dims = x.dims4("batchnorm2d")?;
        let [n, c, h, w] = dims;
        for (what, shape) in [
            ("gamma", self.shape(gamma)),
            ("beta", self.shape(beta)),
            ("running_mean", running_mean.shape()),
            ("running_var", running_var.shape()),
        ] {
            if shape != [c] {
                return Err(Error::shape("batchnorm2d", format!("{what} shape {shape:?} != [{c}]")));
            }
        }
        let count = n * h * w;
        let (mean, inv_std): (Vec<T>, Vec<T>) = match mode {
            Mode::Train => {
                if count < 2 {
                    return Err(Error::invalid(
                        "batchnorm2d",
                        format!("train mode needs N·H·W >= 2 per channel, got {count}"),
                    ));
                }
                let (mean, var) = kernels::channel_stats(x.data(), dims);
                let unbias = count as f64 / (count - 1) as f64;
                for ch in 0..c {
                    let rm = &mut running_mean.data_mut()[ch];
                    *rm = T::from_f64((1.0 - momentum) * rm.as_f64() + momentum * mean[ch]);
                    let rv = &mut running_var.data_mut()[ch];
                    *rv = T::from_f64((1.0 - momentum) * rv.as_f64() + momentum * var[ch] * unbias);
                }
                (
                    mean.iter().map(|&m| T::from_f64(m)).collect(),
                    var.iter().map(|&v| T::from_f64(1.0 / (v + eps).sqrt())).collect(),
                )
            }
            Mode::Eval => (
                running_mean.data().to_vec(),
                running_var.data().iter().map(|&v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt())).collect(),
            ),
        };
        let mut out = Tensor::zeros(x.shape());
        kernels::batch_norm_apply(
            x.data(),
            dims,
            &mean,
            &inv_std,
            self.value(gamma).data(),
            self.value(beta).data(),
            out.data_mut(),
        );
        let rg = self.needs(&[input, gamma, beta]);
        Ok(self.push(out, Op::BatchNorm { input, gamma, beta, mean, inv_std, train: mode == Mode::Train }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let out = Tensor::new(x.shape(), data).expect("same shape");
        let rg = self.needs(&[input]);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(a.shape(), data)?;
        let rg = self.needs(&[lhs, rhs]);
        Ok(self.push(out, Op::Add { lhs, rhs }, rg))
    }

    /// `input (N×F) · weightᵀ (F×O) + bias`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, f] = self.value(input).dims2("dense")?;
        let [o, wf] = self.value(weight).dims2("dense")?;
        if wf != f {
            return Err(Error::shape("dense", format!("input has F={f} but weight is {o}×{wf}")));
        }
        if self.shape(bias) != [o] {
            return Err(Error::shape("dense", format!("bias shape {:?} != [{o}]", self.shape(bias))));
        }
        let mut out = Tensor::zeros(&[n, o]);
        kernels::dense_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            n,
            f,
            o,
            out.data_mut(),
        );
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(out, Op::Dense { input, weight, bias }, rg))
    }

    /// Mean over H×W: N×C×H×W → N×C.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, c, h, w] = x.dims4("global_avg_pool")?;
        let plane = h * w;
        let scale = T::from_f64(1.0 / plane as f64);
        let data = x.data().chunks(plane).map(|p| p.iter().copied().sum::<T>() * scale).collect();
        let out = Tensor::new(&[n, c], data)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool { input }, rg))
    }

    /// Row-wise softmax of an N×K matrix.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let [n, k] = x.dims2("softmax")?;
        let mut data = Vec::with_capacity(n * k);
        for row in x.data().chunks(k) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: T = e.iter().copied().sum();
            data.extend(e.into_iter().map(|v| v / s));
        }
        let out = Tensor::new(&[n, k], data)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Softmax { input }, rg))
    }

    /// `out[n] = Σᵢ gates[n, i] · experts[i][n]` with per-sample gates (N×E).
    pub fn weighted_mixture(&mut self, experts: &[Var], gates: Var) -> Result<Var> {
        let Some(&first) = experts.first() else {
            return Err(Error::invalid("weighted_mixture", "needs at least one expert"));
        };
        let shape = self.shape(first).to_vec();
        if let Some(bad) = experts.iter().find(|&&e| self.shape(e) != shape.as_slice()) {
            return Err(Error::shape(
                "weighted_mixture",
                format!("expert shapes differ: {shape:?} vs {:?}", self.shape(*bad)),
            ));
        }
        let n = shape[0];
        let e_count = experts.len();
        if self.shape(gates) != [n, e_count] {
            return Err(Error::shape(
                "weighted_mixture",
                format!("gates shape {:?} != [{n}, {e_count}]", self.shape(gates)),
            ));
        }
        let per_sample: usize = shape[1..].iter().product();
        let g = self.value(gates).data();
        let mut out = Tensor::zeros(&shape);
        for (i, &ev) in experts.iter().enumerate() {
            let e = self.value(ev).data();
            for b in 0..n {
                let gi = g[b * e_count + i];
                let s = b * per_sample;
                for (o, &v) in out.data_mut()[s..s + per_sample].iter_mut().zip(&e[s..s + per_sample]) {
                    *o += gi * v;
                }
            }
        }
        let rg = self.needs(experts) || self.needs(&[gates]);
        Ok(self.push(out, Op::WeightedMixture { experts: experts.to_vec(), gates }, rg))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn log_softmax_nll(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let [n, k] = x.dims2("log_softmax_nll")?;
        if labels.len() != n {
            return Err(Error::shape("log_softmax_nll", format!("{n} rows but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid("log_softmax_nll", format!("label {bad} out of range [0, {k})")));
        }
        let mut total = 0.0f64;
        for (row, &label) in x.data().chunks(k).zip(labels) {
            total += row_nll(row, label);
        }
        let out = Tensor::scalar(T::from_f64(total / n as f64));
        let rg = self.needs(&[logits]);
        Ok(self.push(out, Op::LogSoftmaxNll { logits, labels: labels.to_vec() }, rg))
    }

    /// `Σ weights ⊙ input`: reduces any tensor to a scalar with fixed
    /// coefficients.
    pub fn weighted_sum(&mut self, input: Var, weights: &[T]) -> Result<Var> {
        let x = self.value(input);
        if weights.len() != x.numel() {
            return Err(Error::shape("weighted_sum", format!("{} weights for {} elements", weights.len(), x.numel())));
        }
        let s: T = x.data().iter().zip(weights).map(|(&a, &b)| a * b).sum();
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { input, weights: weights.to_vec() }, rg))
    }

    /// Plain sum of all elements.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let ones = vec![T::one(); self.value(input).numel()];
        self.weighted_sum(input, &ones)
    }

    /// Back-propagates from the scalar `loss`.
    ///
    /// Every parameter's `grad` is overwritten: parameters that do not reach
    /// the loss end up with zeros. Gradients of [`Tape::leaf`] values are
    /// returned.
    pub fn backward(mut self, loss: Var, params: &mut ParamSet<T>) -> Result<Gradients<T>> {
        let loss_shape = self.shape(loss).to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        params.zero_grad();
        self.nodes.truncate(loss.0 + 1);
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&loss_shape));
        let mut leaves = HashMap::new();

        while let Some(node) = self.nodes.pop() {
            let idx = self.nodes.len();
            let Some(dy) = grads[idx].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            match node.op {
                Op::Input => {}
                Op::Leaf => {
                    leaves.insert(Var(idx), dy);
                }
                Op::Param(id) => {
                    let g = params.get_mut(id).grad.data_mut();
                    g.iter_mut().zip(dy.data()).for_each(|(a, &b)| *a += b);
                }
                Op::Conv2d { input, weight, bias, geom } => {
                    let (x, w) = (nodes[input.0].value.data(), nodes[weight.0].value.data());
                    if let Some(dx) = slot(&mut grads, nodes, input) {
                        kernels::conv2d_backward(&geom, x, w, dy.data(), Some(dx), None, None);
                    }
                    if let Some(dw) = slot(&mut grads, nodes, weight) {
                        kernels::conv2d_backward(&geom, x, w, dy.data(), None, Some(dw), None);
                    }
                    if let Some(db) = bias.and_then(|b| slot(&mut grads, nodes, b)) {
                        kernels::conv2d_backward(&geom, x, w, dy.data(), None, None, Some(db));
                    }
                }
                Op::BatchNorm { input, gamma, beta, mean, inv_std, train } => {
                    let xv = &nodes[input.0].value;
                    let dims = xv.dims4("batchnorm2d")?;
                    let g = nodes[gamma.0].value.data();
                    let run = |dx: Option<&mut [T]>, dg: Option<&mut [T]>, db: Option<&mut [T]>| {
                        kernels::batch_norm_backward(xv.data(), dims, &mean, &inv_std, g, dy.data(), train, dx, dg, db)
                    };
                    if let Some(dx) = slot(&mut grads, nodes, input) {
                        run(Some(dx), None, None);
                    }
                    if let Some(dg) = slot(&mut grads, nodes, gamma) {
                        run(None, Some(dg), None);
                    }
                    if let Some(db) = slot(&mut grads, nodes, beta) {
                        run(None, None, Some(db));
                    }
                }
                Op::Relu { input } => {
                    let x = nodes[input.0].value.data();
                    if let Some(dx) = slot(&mut grads, nodes, input) {
                        for ((d, &g), &v) in dx.iter_mut().zip(dy.data()).zip(x) {
                            if v > T::zero() {
                                *d += g;
                            }
                        }
                    }
                }
                Op::Add { lhs, rhs } => {
                    for v in [lhs, rhs] {
                        if let Some(d) = slot(&mut grads, nodes, v) {
                            d.iter_mut().zip(dy.data()).for_each(|(a, &b)| *a += b);
                        }
                    }
                }
                Op::Dense { input, weight, bias } => {
                    let x = &nodes[input.0].value;
                    let w = nodes[weight.0].value.data();
                    let [n, f] = x.dims2("dense")?;
                    let o = dy.shape()[1];
                    let run = |dx: Option<&mut [T]>, dw: Option<&mut [T]>, db: Option<&mut [T]>| {
                        kernels::dense_backward(x.data(), w, dy.data(), n, f, o, dx, dw, db)
                    };
                    if let Some(dx) = slot(&mut grads, nodes, input) {
                        run(Some(dx), None, None);
                    }
                    if let Some(dw) = slot(&mut grads, nodes, weight) {
                        run(None, Some(dw), None);
                    }
                    if let Some(db) = slot(&mut grads, nodes, bias) {
                        run(None, None, Some(db));
                    }
                }
                Op::GlobalAvgPool { input } => {
                    let [_, _, h, w] = nodes[input.0].value.dims4("global_avg_pool")?;
                    let plane = h * w;
                    let scale = T::from_f64(1.0 / plane as f64);
                    if let Some(dx) = slot(&mut grads, nodes, input) {
                        for (chunk, &g) in dx.chunks_mut(plane).zip(dy.data()) {
                            chunk.iter_mut().for_each(|d| *d += g * scale);
                        }
                    }
                }
                Op::Softmax { input } => {
                    let k = node.value.shape()[1];
                    if let Some(dx) = slot(&mut grads, nodes, input) {
                        for ((d, y), g) in dx.chunks_mut(k).zip(node.value.data().chunks(k)).zip(dy.data().chunks(k)) {
                            let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                            for ((di, &yi), &gi) in d.iter_mut().zip(y).zip(g) {
                                *di += yi * (gi - dot);
                            }
                        }
                    }
                }
                Op::WeightedMixture { experts, gates } => {
                    let e_count = experts.len();
                    let n = dy.shape()[0];
                    let per_sample = dy.numel() / n;
                    let gv = nodes[gates.0].value.data().to_vec();
                    for (i, &ev) in experts.iter().enumerate() {
                        if let Some(de) = slot(&mut grads, nodes, ev) {
                            for b in 0..n {
                                let gi = gv[b * e_count + i];
                                let s = b * per_sample;
                                for (d, &g) in de[s..s + per_sample].iter_mut().zip(&dy.data()[s..s + per_sample]) {
                                    *d += gi * g;
                                }
                            }
                        }
                    }
                    if let Some(dg) = slot(&mut grads, nodes, gates) {
                        for (i, &ev) in experts.iter().enumerate() {
                            let e = nodes[ev.0].value.data();
                            for b in 0..n {
                                let s = b * per_sample;
                                let dot: T = e[s..s + per_sample]
                                    .iter()
                                    .zip(&dy.data()[s..s + per_sample])
                                    .map(|(&a, &b)| a * b)
                                    .sum();
                                dg[b * e_count + i] += dot;
                            }
                        }
                    }
                }
                Op::LogSoftmaxNll { logits, labels } => {
                    let x = &nodes[logits.0].value;
                    let k = x.shape()[1];
                    let scale = dy.data()[0] / T::from_f64(labels.len() as f64);
                    if let Some(dx) = slot(&mut grads, nodes, logits) {
                        for ((d, row), &label) in dx.chunks_mut(k).zip(x.data().chunks(k)).zip(&labels) {
                            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                            let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
                            let s: T = e.iter().copied().sum();
                            for (j, (di, ej)) in d.iter_mut().zip(e).enumerate() {
                                let onehot = if j == label { T::one() } else { T::zero() };
                                *di += scale * (ej / s - onehot);
                            }
                        }
                    }
                }
                Op::WeightedSum { input, weights } => {
                    let g = dy.data()[0];
                    if let Some(dx) = slot(&mut grads, nodes, input) {
                        dx.iter_mut().zip(&weights).for_each(|(d, &w)| *d += g * w);
                    }
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// `−log softmax(row)[label]`, stabilized by max subtraction.
pub(crate) fn row_nll<T: Scalar>(row: &[T], label: usize) -> f64 {
    let m = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln();
    lse - row[label].as_f64()
}

/// Gradient accumulator for `v`, allocated on first use; `None` when `v` does
/// not need a gradient.
fn slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], nodes: &[Node<T>], v: Var) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(node.value.shape())).data_mut())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.input(t(&[1, 1, 1, 1], &[1.0]));
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_output_shape() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(&[1, 3, 64, 64]));
        let w = tape.input(Tensor::zeros(&[16, 3, 3, 3]));
        let y = tape.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[1, 16, 32, 32]);
    }

    #[test]
    fn conv_shape_errors_name_dims() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(&[1, 3, 2, 2]));
        let w = tape.input(Tensor::zeros(&[4, 3, 3, 3]));
        let err = tape.conv2d(x, w, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("H=2") && err.contains("kh=3"), "{err}");
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-0.5, 0.0, 0.5]));
        let y = tape.relu(x);
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l, &mut ParamSet::new()).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn global_avg_pool_mean() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0]);
    }

    #[test]
    fn mixture_arithmetic() {
        let mut tape = Tape::new();
        let a = tape.input(t(&[1, 1], &[4.0]));
        let b = tape.input(t(&[1, 1], &[8.0]));
        let g = tape.input(t(&[1, 2], &[0.25, 0.75]));
        let y = tape.weighted_mixture(&[a, b], g).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0]);
    }

    #[test]
    fn mixture_errors() {
        let mut tape = Tape::<f64>::new();
        let g = tape.input(Tensor::ones(&[1, 1]));
        assert!(tape.weighted_mixture(&[], g).is_err());
        let a = tape.input(Tensor::ones(&[1, 2]));
        let b = tape.input(Tensor::ones(&[1, 3]));
        let g2 = tape.input(Tensor::ones(&[1, 2]));
        assert!(tape.weighted_mixture(&[a, b], g2).is_err());
        assert!(tape.weighted_mixture(&[a], g2).is_err());
    }

    #[test]
    fn nll_of_uniform_logits_is_ln2() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[2, 2], &[0.0, 0.0, 0.0, 0.0]));
        let l = tape.log_softmax_nll(x, &[0, 1]).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn nll_is_stable_for_large_logits() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::new(&[1, 2], vec![1000.0, 0.0]).unwrap());
        let l = tape.log_softmax_nll(x, &[0]).unwrap();
        let v = tape.value(l).data()[0];
        assert!(v.is_finite() && v.abs() < 1e-6, "{v}");
    }

    #[test]
    fn nll_rejects_bad_label() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(&[1, 2]));
        assert!(tape.log_softmax_nll(x, &[2]).is_err());
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        let err = tape.backward(x, &mut ParamSet::new()).unwrap_err();
        assert!(matches!(err, Error::NonScalarLoss(_)));
    }

    #[test]
    fn param_gradients_sum_and_unused() {
        let mut ps = ParamSet::<f64>::new();
        let p = ps.add_param("p", Tensor::full(&[2, 2], 3.0), true).unwrap();
        let q = ps.add_param("q", Tensor::full(&[3], 1.0), true).unwrap();
        ps.get_mut(q).grad = Tensor::full(&[3], 5.0);
        let mut tape = Tape::new();
        let pv = tape.param(&ps, p);
        let _qv = tape.param(&ps, q);
        let l = tape.sum(pv).unwrap();
        tape.backward(l, &mut ps).unwrap();
        assert_eq!(ps.get(p).grad.data(), &[1.0; 4]);
        assert_eq!(ps.get(q).grad.data(), &[0.0; 3]);
    }

    #[test]
    fn dense_identity() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[2, 2], &[1.0, -2.0, 3.0, 4.5]));
        let w = tape.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.input(t(&[2], &[0.0, 0.0]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.0, 4.5]);
        let w2 = tape.input(Tensor::zeros(&[2, 3]));
        assert!(tape.dense(x, w2, b).is_err());
    }

    #[test]
    fn batch_norm_constant_channel_gives_beta() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::full(&[2, 1, 2, 2], 3.0));
        let g = tape.input(t(&[1], &[2.0]));
        let b = tape.input(t(&[1], &[0.7]));
        let (mut rm, mut rv) = (Tensor::zeros(&[1]), Tensor::ones(&[1]));
        let y = tape.batch_norm(x, g, b, &mut rm, &mut rv, Mode::Train, 1e-5, 0.1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        // running ← 0.9·r + 0.1·batch
        assert!((rm.data()[0] - 0.3).abs() < 1e-12);
        assert!((rv.data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_eval_defaults_and_train_minimum() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[1, 1, 1, 1], &[2.0]));
        let g = tape.input(t(&[1], &[1.0]));
        let b = tape.input(t(&[1], &[0.0]));
        let (mut rm, mut rv) = (Tensor::zeros(&[1]), Tensor::ones(&[1]));
        let y = tape.batch_norm(x, g, b, &mut rm, &mut rv, Mode::Eval, 1e-5, 0.1).unwrap();
        assert!((tape.value(y).data()[0] - 2.0 / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        assert!(tape.batch_norm(x, g, b, &mut rm, &mut rv, Mode::Train, 1e-5, 0.1).is_err());
    }
}
