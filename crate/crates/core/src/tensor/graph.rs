//! Operation tape for reverse-mode differentiation.
//!
//! Nodes are appended in execution order, so every node's inputs precede
//! it and a single reverse sweep over the node list is a valid topological
//! traversal. A graph is built per forward pass and dropped afterwards.

use super::conv::{conv2d_backward, conv2d_forward};
use super::gemm::matmul_into;
use super::Tensor;
use crate::error::{contract_err, dim_err, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

impl BinaryOp {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Max => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Right-hand side of an elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand {
    Var(Var),
    Scalar(f64),
}

impl From<Var> for Operand {
    fn from(v: Var) -> Self {
        Operand::Var(v)
    }
}

impl From<f64> for Operand {
    fn from(s: f64) -> Self {
        Operand::Scalar(s)
    }
}

/// Per-channel batch statistics produced by a training-mode batch norm.
/// `var` is the unbiased estimate, used for running-statistics updates.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary {
        kind: BinaryOp,
        a: Var,
        b: Var,
    },
    BinaryScalar {
        kind: BinaryOp,
        a: Var,
        s: f64,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    AddRowBias {
        x: Var,
        bias: Var,
    },
    AddChannelBias {
        x: Var,
        bias: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        batch_stats: bool,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } => vec![*a, *b],
            Op::BinaryScalar { a, .. } => vec![*a],
            Op::AddRowBias { x, bias } | Op::AddChannelBias { x, bias } => vec![*x, *bias],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu { x } | Op::GlobalAvgPool { x } | Op::Sum { x } | Op::Mean { x } => vec![*x],
            Op::Concat { parts } => parts.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn nchw(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => dim_err(format!("{what} expects [N,C,H,W], got {:?}", t.shape())),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let inputs = op.inputs();
        if cfg!(debug_assertions)
            && inputs.iter().all(|v| self.nodes[v.0].value.all_finite())
        {
            assert!(
                value.all_finite(),
                "non-finite output from finite inputs in {op:?}"
            );
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Elementwise `a ∘ b` where `b` has `a`'s shape or is a scalar.
    pub fn elementwise(&mut self, kind: BinaryOp, a: Var, b: impl Into<Operand>) -> Result<Var> {
        let av = self.value(a);
        match b.into() {
            Operand::Var(b) => {
                let bv = self.value(b);
                if av.shape() != bv.shape() {
                    return dim_err(format!(
                        "elementwise {kind:?}: shapes {:?} and {:?} differ",
                        av.shape(),
                        bv.shape()
                    ));
                }
                if kind == BinaryOp::Div {
                    if let Some(i) = bv.data().iter().position(|&v| v == 0.0) {
                        return Err(Error::DivisionByZero(i));
                    }
                }
                let data = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| kind.apply(x, y))
                    .collect();
                let value = Tensor::new(av.shape(), data)?;
                Ok(self.push(value, Op::Binary { kind, a, b }))
            }
            Operand::Scalar(s) => {
                if kind == BinaryOp::Div && s == 0.0 {
                    return Err(Error::DivisionByZero(0));
                }
                let value = av.map(|x| kind.apply(x, s));
                Ok(self.push(value, Op::BinaryScalar { kind, a, s }))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: impl Into<Operand>) -> Result<Var> {
        self.elementwise(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: impl Into<Operand>) -> Result<Var> {
        self.elementwise(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: impl Into<Operand>) -> Result<Var> {
        self.elementwise(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: impl Into<Operand>) -> Result<Var> {
        self.elementwise(BinaryOp::Div, a, b)
    }

    pub fn maximum(&mut self, a: Var, b: impl Into<Operand>) -> Result<Var> {
        self.elementwise(BinaryOp::Max, a, b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (av.shape(), bv.shape()) else {
            return dim_err(format!(
                "matmul expects 2-D operands, got {:?} and {:?}",
                av.shape(),
                bv.shape()
            ));
        };
        if k != k2 {
            return dim_err(format!("matmul inner extents differ: {k} vs {k2}"));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(m, k, n, av.data(), (k, 1), bv.data(), (n, 1), &mut out, false);
        let value = Tensor::new(&[m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    /// `x[N,F] + bias[F]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (&[_, f], &[fb]) = (xv.shape(), bv.shape()) else {
            return dim_err(format!(
                "add_row_bias expects x[N,F], b[F]; got {:?}, {:?}",
                xv.shape(),
                bv.shape()
            ));
        };
        if f != fb {
            return dim_err(format!("add_row_bias: {f} features vs bias of {fb}"));
        }
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(f) {
            row.iter_mut().zip(bv.data()).for_each(|(v, b)| *v += b);
        }
        Ok(self.push(value, Op::AddRowBias { x, bias }))
    }

    /// `x[N,C,H,W] + bias[C]` broadcast over samples and pixels.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, c, h, w) = nchw(self.value(x), "add_channel_bias")?;
        let bv = self.value(bias);
        if bv.shape() != [c] {
            return dim_err(format!("channel bias {:?} for {c} channels", bv.shape()));
        }
        let mut value = self.value(x).clone();
        for (k, plane) in value.data_mut().chunks_mut(h * w).enumerate() {
            let b = bv.data()[k % c];
            plane.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.push(value, Op::AddChannelBias { x, bias }))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = conv2d_forward(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(value, Op::Conv2d { x, w, stride, pad }))
    }

    fn check_norm_params(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (n, c, h, w) = nchw(self.value(x), "batch_norm")?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return dim_err(format!(
                    "batch_norm: parameter shape {:?} for {c} channels",
                    self.value(p).shape()
                ));
            }
        }
        Ok((n, c, h * w))
    }

    fn norm_node(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let (n, c, hw) = self.check_norm_params(x, gamma, beta)?;
        let xv = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xv.numel()];
        let mut out = vec![0.0; xv.numel()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let h = (xv.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + b[ch];
                }
            }
        }
        let value = Tensor::new(xv.shape(), out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                batch_stats,
                xhat,
                inv_std,
            },
        ))
    }

    /// Batch normalization with per-channel statistics of the current batch.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, NormStats)> {
        let (n, c, hw) = self.check_norm_params(x, gamma, beta)?;
        let count = n * hw;
        if count < 2 {
            return contract_err(format!(
                "training-mode batch norm needs at least 2 values per channel, got {count}"
            ));
        }
        let data = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sum += data[base..base + hw].iter().sum::<f64>();
            }
            let mu = sum / count as f64;
            let mut sq = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sq += data[base..base + hw].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
            }
            mean[ch] = mu;
            var[ch] = sq / count as f64;
        }
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let out = self.norm_node(x, gamma, beta, &mean, inv_std, true)?;
        let unbiased = var
            .iter()
            .map(|v| v * count as f64 / (count - 1) as f64)
            .collect();
        Ok((out, NormStats { mean, var: unbiased }))
    }

    /// Batch normalization with fixed (running) statistics: a per-channel affine map.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (_, c, _) = self.check_norm_params(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return dim_err("batch_norm_eval: running statistics have wrong length");
        }
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.norm_node(x, gamma, beta, mean, inv_std, false)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through so a poisoned input still shows up in the loss
        let value = self.value(x).map(|v| if v < 0.0 { 0.0 } else { v });
        self.push(value, Op::Relu { x })
    }

    /// Per-channel spatial mean: `[N,C,H,W] → [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = nchw(xv, "global_avg_pool")?;
        let hw = h * w;
        let out = xv
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f64>() / hw as f64)
            .collect();
        let value = Tensor::new(&[n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x }))
    }

    /// Concatenate `[N,C_i,H,W]` tensors along the channel axis, in order.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat of zero tensors");
        };
        let (n, _, h, w) = nchw(self.value(first), "concat_channels")?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = nchw(self.value(p), "concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return dim_err(format!(
                    "concat_channels: part {:?} does not match N={n}, H={h}, W={w}",
                    self.value(p).shape()
                ));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(n * total * h * w);
        for s in 0..n {
            for &p in parts {
                let pv = self.value(p);
                let block = pv.numel() / n;
                out.extend_from_slice(&pv.data()[s * block..(s + 1) * block]);
            }
        }
        let value = Tensor::new(&[n, total, h, w], out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(value, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.numel() as f64);
        self.push(value, Op::Mean { x })
    }

    /// Mean softmax cross-entropy of `logits[N,J]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let &[n, j] = lv.shape() else {
            return dim_err(format!("cross entropy expects [N,J] logits, got {:?}", lv.shape()));
        };
        if targets.len() != n {
            return dim_err(format!("{} targets for {n} rows", targets.len()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= j) {
            return Err(Error::Index { index: t, len: j });
        }
        let mut probs = vec![0.0; n * j];
        let mut total = 0.0;
        for (r, row) in lv.data().chunks(j).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in probs[r * j..(r + 1) * j].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            probs[r * j..(r + 1) * j].iter_mut().for_each(|p| *p /= z);
            total += max + z.ln() - row[targets[r]];
        }
        let value = Tensor::scalar(total / n as f64);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Populate gradients of the scalar `loss` with respect to every node
    /// that requires them. Any previous gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).ndim() != 0 {
            return contract_err(format!(
                "backward needs a 0-dimensional loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let Graph { nodes, grads } = self;
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            propagate(nodes, grads, i, &dy)?;
            grads[i] = Some(dy);
        }
        Ok(())
    }

    /// Gradient of the last backward pass; `None` when `v` is not tracked.
    /// Tracked nodes the loss does not depend on get zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let shape = node.value.shape();
        Some(match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        })
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]))
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, dy: &[f64]) -> Result<()> {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Binary { kind, a, b } => {
            let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            if let Some(ga) = slot(grads, nodes, *a) {
                for (k, g) in ga.iter_mut().enumerate() {
                    *g += match kind {
                        BinaryOp::Add | BinaryOp::Sub => dy[k],
                        BinaryOp::Mul => dy[k] * bv[k],
                        BinaryOp::Div => dy[k] / bv[k],
                        BinaryOp::Max => {
                            if av[k] >= bv[k] {
                                dy[k]
                            } else {
                                0.0
                            }
                        }
                    };
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for (k, g) in gb.iter_mut().enumerate() {
                    *g += match kind {
                        BinaryOp::Add => dy[k],
                        BinaryOp::Sub => -dy[k],
                        BinaryOp::Mul => dy[k] * av[k],
                        BinaryOp::Div => -dy[k] * av[k] / (bv[k] * bv[k]),
                        BinaryOp::Max => {
                            if av[k] >= bv[k] {
                                0.0
                            } else {
                                dy[k]
                            }
                        }
                    };
                }
            }
        }
        Op::BinaryScalar { kind, a, s } => {
            let av = nodes[a.0].value.data();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (k, g) in ga.iter_mut().enumerate() {
                    *g += match kind {
                        BinaryOp::Add | BinaryOp::Sub => dy[k],
                        BinaryOp::Mul => dy[k] * s,
                        BinaryOp::Div => dy[k] / s,
                        BinaryOp::Max => {
                            if av[k] >= *s {
                                dy[k]
                            } else {
                                0.0
                            }
                        }
                    };
                }
            }
        }
        Op::MatMul { a, b } => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if let Some(ga) = slot(grads, nodes, *a) {
                // dA[m,k] += dY[m,n] · Bᵀ[n,k]
                matmul_into(m, n, k, dy, (n, 1), bv.data(), (1, n), ga, true);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                // dB[k,n] += Aᵀ[k,m] · dY[m,n]
                matmul_into(k, m, n, av.data(), (1, k), dy, (n, 1), gb, true);
            }
        }
        Op::AddRowBias { x, bias } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
            }
            if let Some(gb) = slot(grads, nodes, *bias) {
                let f = gb.len();
                for row in dy.chunks(f) {
                    gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                }
            }
        }
        Op::AddChannelBias { x, bias } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
            }
            let (_, _, h, w) = nchw(&nodes[x.0].value, "add_channel_bias")?;
            if let Some(gb) = slot(grads, nodes, *bias) {
                let c = gb.len();
                for (k, plane) in dy.chunks(h * w).enumerate() {
                    gb[k % c] += plane.iter().sum::<f64>();
                }
            }
        }
        Op::Conv2d { x, w, stride, pad } => {
            let (xv, wv) = (&nodes[x.0].value, &nodes[w.0].value);
            let (want_dx, want_dw) = (nodes[x.0].requires_grad, nodes[w.0].requires_grad);
            let (dx, dw) = conv2d_backward(xv, wv, dy, *stride, *pad, want_dx, want_dw)?;
            if let (Some(gx), Some(dx)) = (slot(grads, nodes, *x), dx) {
                gx.iter_mut().zip(&dx).for_each(|(g, d)| *g += d);
            }
            if let (Some(gw), Some(dw)) = (slot(grads, nodes, *w), dw) {
                gw.iter_mut().zip(&dw).for_each(|(g, d)| *g += d);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            batch_stats,
            xhat,
            inv_std,
        } => {
            let (n, c, h, w) = nchw(&nodes[x.0].value, "batch_norm")?;
            let hw = h * w;
            let count = (n * hw) as f64;
            let gv = nodes[gamma.0].value.data();
            let mut sum_dy = vec![0.0; c];
            let mut sum_dy_xhat = vec![0.0; c];
            for s in 0..n {
                for ch in 0..c {
                    let base = (s * c + ch) * hw;
                    let (d, xh) = (&dy[base..base + hw], &xhat[base..base + hw]);
                    sum_dy[ch] += d.iter().sum::<f64>();
                    sum_dy_xhat[ch] += d.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                for ch in 0..c {
                    // batch statistics: γσ⁻¹(dy − mean(dy) − x̂·mean(dy·x̂))
                    let scale = gv[ch] * inv_std[ch];
                    let (k_mean, k_xhat) = if *batch_stats {
                        (scale * sum_dy[ch] / count, scale * sum_dy_xhat[ch] / count)
                    } else {
                        (0.0, 0.0)
                    };
                    for s in 0..n {
                        let base = (s * c + ch) * hw;
                        let g = &mut gx[base..base + hw];
                        for ((g, d), xh) in g.iter_mut().zip(&dy[base..base + hw]).zip(&xhat[base..base + hw]) {
                            *g += scale * d - k_mean - k_xhat * xh;
                        }
                    }
                }
            }
            if let Some(gg) = slot(grads, nodes, *gamma) {
                gg.iter_mut().zip(&sum_dy_xhat).for_each(|(g, d)| *g += d);
            }
            if let Some(gb) = slot(grads, nodes, *beta) {
                gb.iter_mut().zip(&sum_dy).for_each(|(g, d)| *g += d);
            }
        }
        Op::Relu { x } => {
            let xv = nodes[x.0].value.data();
            if let Some(gx) = slot(grads, nodes, *x) {
                for (k, g) in gx.iter_mut().enumerate() {
                    if xv[k] > 0.0 {
                        *g += dy[k];
                    }
                }
            }
        }
        Op::GlobalAvgPool { x } => {
            let (_, _, h, w) = nchw(&nodes[x.0].value, "global_avg_pool")?;
            let hw = h * w;
            if let Some(gx) = slot(grads, nodes, *x) {
                for (plane, d) in gx.chunks_mut(hw).zip(dy) {
                    let share = d / hw as f64;
                    plane.iter_mut().for_each(|g| *g += share);
                }
            }
        }
        Op::Concat { parts } => {
            let n = nodes[i].value.shape()[0];
            let out_block = nodes[i].value.numel() / n;
            let mut offset = 0;
            for p in parts {
                let block = nodes[p.0].value.numel() / n;
                if let Some(gp) = slot(grads, nodes, *p) {
                    for s in 0..n {
                        let src = &dy[s * out_block + offset..][..block];
                        gp[s * block..(s + 1) * block]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(g, d)| *g += d);
                    }
                }
                offset += block;
            }
        }
        Op::Sum { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.iter_mut().for_each(|g| *g += dy[0]);
            }
        }
        Op::Mean { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let share = dy[0] / gx.len() as f64;
                gx.iter_mut().for_each(|g| *g += share);
            }
        }
        Op::SoftmaxCrossEntropy {
            logits,
            targets,
            probs,
        } => {
            if let Some(gl) = slot(grads, nodes, *logits) {
                let n = targets.len();
                let j = probs.len() / n;
                let scale = dy[0] / n as f64;
                for (r, &t) in targets.iter().enumerate() {
                    for c in 0..j {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        gl[r * j + c] += scale * (probs[r * j + c] - onehot);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Split `[N,C,H,W]` into channel groups of the given sizes; inverse of
/// [`Graph::concat_channels`].
pub fn split_channels(t: &Tensor, sizes: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = nchw(t, "split_channels")?;
    if sizes.iter().sum::<usize>() != c {
        return dim_err(format!("split sizes {sizes:?} do not sum to {c} channels"));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(sizes.len());
    let mut first = 0;
    for &sz in sizes {
        let mut data = Vec::with_capacity(n * sz * hw);
        for s in 0..n {
            let start = (s * c + first) * hw;
            data.extend_from_slice(&t.data()[start..start + sz * hw]);
        }
        out.push(Tensor::new(&[n, sz, h, w], data)?);
        first += sz;
    }
    Ok(out)
}
