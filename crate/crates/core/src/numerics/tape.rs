//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward pass. Nodes are appended in evaluation order, so the
//! node list is already a topological order and `backward` walks it in reverse.

use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, ConvSpec, NormSaved};
use super::optim::{Gradients, ParamGroup, ParamId, ParamStore};
use super::tensor::{softmax_vec, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Vec<Var>),
    WeightedSum { inputs: Vec<Var>, weights: Var },
    Softmax(Var),
    Conv { x: Var, w: Var, spec: ConvSpec },
    Bias { x: Var, b: Var },
    Relu(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, saved: Box<NormSaved> },
    NormEval { x: Var, gamma: Var, beta: Var, scale: Vec<(f64, f64, f64)> },
    AvgPool3(Var),
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Up2(Var),
    Slice { x: Var, start: usize },
    Concat(Vec<Var>),
    Total(Var),
    ScaleConst(Var, f64),
    CrossEntropy { logits: Var, labels: Rc<[u8]>, probs: Tensor },
    SoftDice { logits: Var, labels: Rc<[u8]>, probs: Tensor, eps: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    trainable: Vec<ParamGroup>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape on which every parameter group except buffers is differentiable.
    pub fn new() -> Self {
        Self::with_trainable(&[
            ParamGroup::Weight,
            ParamGroup::Norm,
            ParamGroup::Alpha,
            ParamGroup::EdgeP,
            ParamGroup::Beta,
        ])
    }

    /// Parameters outside `groups` enter as constants and receive no gradient.
    pub fn with_trainable(groups: &[ParamGroup]) -> Self {
        Tape {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            trainable: groups.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
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

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        let trainable = p.requires_grad && self.trainable.contains(&p.group);
        let v = if trainable {
            self.push(p.tensor.clone(), Op::Param(id), true)
        } else {
            self.push(p.tensor.clone(), Op::Leaf, false)
        };
        self.param_vars.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(va.shape(), data)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    /// Element-wise sum of same-shaped tensors.
    pub fn sum(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::shape("sum", "no inputs"))?;
        if xs.len() == 1 {
            return Ok(first);
        }
        let mut out = self.value(first).clone();
        for &x in &xs[1..] {
            if self.value(x).shape() != out.shape() {
                return Err(Error::shape(
                    "sum",
                    format!("{:?} vs {:?}", out.shape(), self.value(x).shape()),
                ));
            }
            out.add_assign(self.value(x));
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(out, Op::Sum(xs.to_vec()), ng))
    }

    /// `sum_i weights[i] * inputs[i]` where `weights` is a vector node.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: Var) -> Result<Var> {
        let w = self.value(weights).data().to_vec();
        if w.len() != inputs.len() || inputs.is_empty() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} inputs, {} weights", inputs.len(), w.len()),
            ));
        }
        let shape = self.value(inputs[0]).shape();
        let mut out = Tensor::zeros(shape);
        for (&x, &wi) in inputs.iter().zip(&w) {
            let xv = self.value(x);
            if xv.shape() != shape {
                return Err(Error::shape(
                    "weighted_sum",
                    format!("{:?} vs {:?}", shape, xv.shape()),
                ));
            }
            out.add_scaled(xv, wi);
        }
        let ng = self.ng(weights) || inputs.iter().any(|&x| self.ng(x));
        Ok(self.push(
            out,
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights,
            },
            ng,
        ))
    }

    /// Softmax over all entries of `v`.
    pub fn softmax(&mut self, v: Var) -> Result<Var> {
        let s = softmax_vec(self.value(v).data())?;
        let ng = self.ng(v);
        Ok(self.push(Tensor::vector(&s), Op::Softmax(v), ng))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, spec: ConvSpec) -> Result<Var> {
        let out = kernels::conv2d(self.value(x), self.value(w), spec)?;
        let ng = self.ng(x) || self.ng(w);
        Ok(self.push(out, Op::Conv { x, w, spec }, ng))
    }

    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = kernels::bias_add(self.value(x), self.value(b))?;
        let ng = self.ng(x) || self.ng(b);
        Ok(self.push(out, Op::Bias { x, b }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    /// Training-mode normalization; returns the output and the batch `(mean, biased var)`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (out, saved) =
            kernels::batch_norm(self.value(x), self.value(gamma), self.value(beta))?;
        let (mean, var) = (saved.mean.clone(), saved.var.clone());
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved: Box::new(saved),
            },
            ng,
        );
        Ok((v, mean, var))
    }

    /// Evaluation-mode normalization with fixed statistics.
    pub fn norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        if mean.len() != c || var.len() != c || self.value(gamma).len() != c {
            return Err(Error::shape("norm_eval", format!("{c} channels")));
        }
        let scale = kernels::norm_eval_scale(mean, var, self.value(gamma));
        let beta_v = self.value(beta).data().to_vec();
        let mut out = xv.clone();
        let hw = h * w;
        for b in 0..n {
            for ch in 0..c {
                let (s, m, _) = scale[ch];
                for e in &mut out.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                    *e = (*e - m) * s + beta_v[ch];
                }
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            out,
            Op::NormEval {
                x,
                gamma,
                beta,
                scale,
            },
            ng,
        ))
    }

    pub fn avg_pool3x3(&mut self, x: Var) -> Var {
        let out = kernels::avg_pool3x3(self.value(x));
        let ng = self.ng(x);
        self.push(out, Op::AvgPool3(x), ng)
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = kernels::max_pool2(self.value(x))?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, ng))
    }

    pub fn bilinear_up2(&mut self, x: Var) -> Var {
        let out = kernels::bilinear_up2(self.value(x));
        let ng = self.ng(x);
        self.push(out, Op::Up2(x), ng)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let c = self.value(x).channels();
        if start >= end || end > c {
            return Err(Error::shape(
                "slice_channels",
                format!("[{start}, {end}) of {c} channels"),
            ));
        }
        if start == 0 && end == c {
            return Ok(x);
        }
        let out = self.value(x).slice_channels(start, end);
        let ng = self.ng(x);
        Ok(self.push(out, Op::Slice { x, start }, ng))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let parts: Vec<&Tensor> = xs.iter().map(|&x| self.value(x)).collect();
        let out = Tensor::concat_channels(&parts)?;
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(out, Op::Concat(xs.to_vec()), ng))
    }

    /// Sum of every entry, as a scalar node.
    pub fn total(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Total(x), ng)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let ng = self.ng(x);
        self.push(out, Op::ScaleConst(x, k), ng)
    }

    /// Zeros shaped like `x`, with no dependency on it.
    pub fn zeros_like(&mut self, x: Var) -> Var {
        let t = Tensor::zeros(self.value(x).shape());
        self.constant(t)
    }

    fn check_labels(&self, logits: Var, labels: &[u8]) -> Result<()> {
        let [n, c, h, w] = self.value(logits).shape();
        if labels.len() != n * h * w {
            return Err(Error::shape(
                "segmentation loss",
                format!("{} labels for {n}x{h}x{w} pixels", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
            return Err(Error::ClassOutOfRange {
                class: bad as usize,
                num_classes: c,
            });
        }
        Ok(())
    }

    /// Mean per-pixel cross-entropy of channel-softmaxed `logits` against `labels` (NHW order).
    pub fn cross_entropy(&mut self, logits: Var, labels: Rc<[u8]>) -> Result<Var> {
        self.check_labels(logits, &labels)?;
        let probs = channel_softmax(self.value(logits));
        let [n, c, h, w] = probs.shape();
        let hw = h * w;
        let mut total = 0.0;
        for b in 0..n {
            for i in 0..hw {
                let l = labels[b * hw + i] as usize;
                // log-softmax computed from logits for accuracy
                let lv = self.value(logits);
                let max = (0..c)
                    .map(|k| lv.data()[(b * c + k) * hw + i])
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = (0..c)
                    .map(|k| (lv.data()[(b * c + k) * hw + i] - max).exp())
                    .sum::<f64>()
                    .ln()
                    + max;
                total += lse - lv.data()[(b * c + l) * hw + i];
            }
        }
        let loss = total / (n * hw) as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            },
            ng,
        ))
    }

    /// `1 - mean_c (2 I_c + eps) / (P_c + G_c + eps)` with soft probabilities,
    /// sums taken over batch and pixels.
    pub fn soft_dice_loss(&mut self, logits: Var, labels: Rc<[u8]>, eps: f64) -> Result<Var> {
        self.check_labels(logits, &labels)?;
        let probs = channel_softmax(self.value(logits));
        let stats = dice_stats(&probs, &labels);
        let c = probs.channels();
        let mean_dice = stats
            .iter()
            .map(|&(i, p, g)| (2.0 * i + eps) / (p + g + eps))
            .sum::<f64>()
            / c as f64;
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(1.0 - mean_dice),
            Op::SoftDice {
                logits,
                labels,
                probs,
                eps,
            },
            ng,
        ))
    }

    /// Reverse pass from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root has shape {:?}, expected a scalar", self.value(root).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut out = Gradients::default();
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let mut send = |v: Var, t: Tensor| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate(*id, g),
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    send(*a, Tensor::from_vec(va.shape(), d).expect("mul grad"));
                }
                if self.ng(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                    send(*b, Tensor::from_vec(vb.shape(), d).expect("mul grad"));
                }
            }
            Op::Sum(xs) => {
                for &x in xs {
                    send(x, g.clone());
                }
            }
            Op::WeightedSum { inputs, weights } => {
                let w = self.value(*weights).data();
                if self.ng(*weights) {
                    let gw: Vec<f64> = inputs
                        .iter()
                        .map(|&x| {
                            self.value(x)
                                .data()
                                .iter()
                                .zip(g.data())
                                .map(|(a, b)| a * b)
                                .sum()
                        })
                        .collect();
                    send(*weights, Tensor::vector(&gw));
                }
                for (&x, &wi) in inputs.iter().zip(w) {
                    if self.ng(x) {
                        send(x, g.map(|v| v * wi));
                    }
                }
            }
            Op::Softmax(v) => {
                let s = node.value.data();
                let dot: f64 = s.iter().zip(g.data()).map(|(a, b)| a * b).sum();
                let gi: Vec<f64> = s
                    .iter()
                    .zip(g.data())
                    .map(|(si, gi)| si * (gi - dot))
                    .collect();
                let shape = self.value(*v).shape();
                send(*v, Tensor::from_vec(shape, gi).expect("softmax grad shape"));
            }
            Op::Conv { x, w, spec } => {
                let (gx, gw) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    *spec,
                    &g,
                    self.ng(*x),
                    self.ng(*w),
                );
                if let Some(gx) = gx {
                    send(*x, gx);
                }
                if let Some(gw) = gw {
                    send(*w, gw);
                }
            }
            Op::Bias { x, b } => {
                if self.ng(*b) {
                    let shape = self.value(*b).shape();
                    let sums = kernels::channel_sums(&g);
                    send(*b, Tensor::from_vec(shape, sums).expect("bias grad shape"));
                }
                send(*x, g);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut gx = g;
                for (gi, &xi) in gx.data_mut().iter_mut().zip(xv.data()) {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
                send(*x, gx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (gx, gg, gb) = kernels::batch_norm_backward(saved, self.value(*gamma), &g);
                let gshape = self.value(*gamma).shape();
                let bshape = self.value(*beta).shape();
                send(*x, gx);
                send(*gamma, Tensor::from_vec(gshape, gg.into_data()).expect("gamma"));
                send(*beta, Tensor::from_vec(bshape, gb.into_data()).expect("beta"));
            }
            Op::NormEval {
                x,
                gamma,
                beta,
                scale,
            } => {
                let xv = self.value(*x);
                let [n, c, h, w] = xv.shape();
                let hw = h * w;
                let mut gx = g.clone();
                let mut gg = vec![0.0; c];
                let mut gb = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let (s, m, inv) = scale[ch];
                        let off = (b * c + ch) * hw;
                        for i in off..off + hw {
                            gb[ch] += g.data()[i];
                            gg[ch] += g.data()[i] * (xv.data()[i] - m) * inv;
                            gx.data_mut()[i] *= s;
                        }
                    }
                }
                let gshape = self.value(*gamma).shape();
                let bshape = self.value(*beta).shape();
                send(*x, gx);
                send(*gamma, Tensor::from_vec(gshape, gg).expect("gamma"));
                send(*beta, Tensor::from_vec(bshape, gb).expect("beta"));
            }
            Op::AvgPool3(x) => send(*x, kernels::avg_pool3x3_backward(&g)),
            Op::MaxPool2 { x, argmax } => {
                let mut gx = Tensor::zeros(self.value(*x).shape());
                for (o, &src) in argmax.iter().enumerate() {
                    gx.data_mut()[src] += g.data()[o];
                }
                send(*x, gx);
            }
            Op::Up2(x) => {
                let shape = self.value(*x).shape();
                send(*x, kernels::bilinear_up2_backward(&g, shape));
            }
            Op::Slice { x, start } => {
                let xv = self.value(*x);
                let [n, c, h, w] = xv.shape();
                let width = g.channels();
                let hw = h * w;
                let mut gx = Tensor::zeros(xv.shape());
                for b in 0..n {
                    let dst = (b * c + start) * hw;
                    let src = b * width * hw;
                    gx.data_mut()[dst..dst + width * hw]
                        .copy_from_slice(&g.data()[src..src + width * hw]);
                }
                send(*x, gx);
            }
            Op::Concat(xs) => {
                let mut start = 0;
                for &x in xs {
                    let width = self.value(x).channels();
                    if self.ng(x) {
                        send(x, g.slice_channels(start, start + width));
                    }
                    start += width;
                }
            }
            Op::Total(x) => {
                let gv = g.data()[0];
                send(*x, Tensor::full(self.value(*x).shape(), gv));
            }
            Op::ScaleConst(x, k) => send(*x, g.map(|v| v * k)),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let gv = g.data()[0];
                let [n, c, h, w] = probs.shape();
                let hw = h * w;
                let k = gv / (n * hw) as f64;
                let mut gx = probs.map(|p| p * k);
                for b in 0..n {
                    for i in 0..hw {
                        let l = labels[b * hw + i] as usize;
                        gx.data_mut()[(b * c + l) * hw + i] -= k;
                    }
                }
                send(*logits, gx);
            }
            Op::SoftDice {
                logits,
                labels,
                probs,
                eps,
            } => {
                let gv = g.data()[0];
                let [n, c, h, w] = probs.shape();
                let hw = h * w;
                let stats = dice_stats(probs, labels);
                // dL/dp for each class and pixel, then through the channel softmax
                let coef: Vec<(f64, f64)> = stats
                    .iter()
                    .map(|&(i, p, gsum)| {
                        let den = p + gsum + eps;
                        let num = 2.0 * i + eps;
                        (2.0 / den, num / (den * den))
                    })
                    .collect();
                let scale = -gv / c as f64;
                let mut gx = Tensor::zeros(probs.shape());
                for b in 0..n {
                    for i in 0..hw {
                        let l = labels[b * hw + i] as usize;
                        let mut dp = vec![0.0; c];
                        for (k, d) in dp.iter_mut().enumerate() {
                            let gt = if k == l { 1.0 } else { 0.0 };
                            *d = scale * (coef[k].0 * gt - coef[k].1);
                        }
                        let dot: f64 = (0..c)
                            .map(|k| probs.data()[(b * c + k) * hw + i] * dp[k])
                            .sum();
                        for k in 0..c {
                            let pk = probs.data()[(b * c + k) * hw + i];
                            gx.data_mut()[(b * c + k) * hw + i] = pk * (dp[k] - dot);
                        }
                    }
                }
                send(*logits, gx);
            }
        }
    }
}

/// Per-pixel softmax across the channel axis.
pub fn channel_softmax(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    for b in 0..n {
        for i in 0..hw {
            let max = (0..c)
                .map(|k| x.data()[(b * c + k) * hw + i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..c {
                let e = (x.data()[(b * c + k) * hw + i] - max).exp();
                out.data_mut()[(b * c + k) * hw + i] = e;
                total += e;
            }
            for k in 0..c {
                out.data_mut()[(b * c + k) * hw + i] /= total;
            }
        }
    }
    out
}

/// Per class: (sum p*g, sum p, sum g).
fn dice_stats(probs: &Tensor, labels: &[u8]) -> Vec<(f64, f64, f64)> {
    let [n, c, h, w] = probs.shape();
    let hw = h * w;
    let mut stats = vec![(0.0, 0.0, 0.0); c];
    for b in 0..n {
        for i in 0..hw {
            let l = labels[b * hw + i] as usize;
            for (k, s) in stats.iter_mut().enumerate() {
                let p = probs.data()[(b * c + k) * hw + i];
                s.1 += p;
                if k == l {
                    s.0 += p;
                    s.2 += 1.0;
                }
            }
        }
    }
    stats
}
