//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in construction order, so the node
//! list is already topologically sorted and [`Graph::backward`] simply walks
//! it in reverse. Graphs are built fresh for every forward pass.
//!
//! Quantization nodes use straight-through rules: rounding is treated as the
//! identity inside the clipping range (see [`crate::quant`]).

use crate::error::{Error, Result};
use crate::gates::softmax_temperature;
use crate::kernels::{self, ConvParams, PoolKind};
use crate::quant;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        params: ConvParams,
    },
    Fc {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Add(Var, Var),
    Pool {
        x: Var,
        window: usize,
        kind: PoolKind,
        winners: Vec<usize>,
    },
    Reshape(Var),
    Pact {
        x: Var,
        clip: Var,
    },
    WeightQuant(Var),
    Softmax {
        logits: Var,
        tau: f64,
    },
    BroadcastRows {
        x: Var,
        rows: usize,
    },
    Blend {
        parts: Vec<Var>,
        coeffs: Var,
    },
    BlendChannels {
        parts: Vec<Var>,
        coeffs: Var,
    },
    WeightedSum {
        x: Var,
        coeffs: Vec<f64>,
    },
    RowMeanBilinear {
        u: Var,
        v: Var,
        table: Vec<f64>,
        scale: f64,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Sum(Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "output of node {} ({})",
                self.nodes.len(),
                op_name(&op)
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf (data, labels, frozen tensors).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, params: ConvParams, context: &str) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            params,
            context,
        )?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv2d { x, w, b, params }, rg)
    }

    pub fn fc(&mut self, x: Var, w: Var, b: Option<Var>, context: &str) -> Result<Var> {
        let out = kernels::fc_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), context)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Fc { x, w, b }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn pool(&mut self, x: Var, window: usize, kind: PoolKind) -> Result<Var> {
        let (out, winners) = kernels::pool_forward(self.value(x), window, kind)?;
        let rg = self.rg(x);
        self.push(
            out,
            Op::Pool {
                x,
                window,
                kind,
                winners,
            },
            rg,
        )
    }

    /// Flattens all axes after the first.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = v.shape().first().copied().unwrap_or(1);
        let rest = v.len().checked_div(n).unwrap_or(0);
        let out = v.reshape(vec![n, rest])?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    /// PACT activation fake quantization with a scalar clip node.
    pub fn pact(&mut self, x: Var, clip: Var, bits: u8) -> Result<Var> {
        let c = self.value(clip).item()?;
        let out = quant::pact_act_fakequant(self.value(x), c, bits)?;
        let rg = self.rg(x) || self.rg(clip);
        self.push(out, Op::Pact { x, clip }, rg)
    }

    /// Per-output-channel weight fake quantization, one bit-width per channel.
    pub fn weight_quant(&mut self, w: Var, bits: &[u8]) -> Result<Var> {
        let out = quant::weight_fakequant_channels(self.value(w), bits)?;
        let rg = self.rg(w);
        self.push(out, Op::WeightQuant(w), rg)
    }

    /// Row-wise softmax with temperature over the last axis.
    pub fn softmax(&mut self, logits: Var, tau: f64) -> Result<Var> {
        let v = self.value(logits);
        let k = *v.shape().last().unwrap_or(&1);
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(k.max(1)) {
            out.extend(softmax_temperature(row, tau)?);
        }
        let out = Tensor::new(v.shape().to_vec(), out)?;
        let rg = self.rg(logits);
        self.push(out, Op::Softmax { logits, tau }, rg)
    }

    /// Repeats a `[1, K]` (or `[K]`) tensor into `[rows, K]`.
    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let v = self.value(x);
        let k = *v.shape().last().unwrap_or(&1);
        if v.len() != k {
            return Err(Error::shape("broadcast_rows", format!("expected one row, got {:?}", v.shape())));
        }
        let data = v.data().repeat(rows);
        let out = Tensor::new(vec![rows, k], data)?;
        let rg = self.rg(x);
        self.push(out, Op::BroadcastRows { x, rows }, rg)
    }

    /// `sum_k coeffs[k] * parts[k]` with `coeffs` of shape `[K]`.
    pub fn blend(&mut self, parts: &[Var], coeffs: Var) -> Result<Var> {
        let c = self.value(coeffs);
        if c.len() != parts.len() || parts.is_empty() {
            return Err(Error::shape(
                "blend",
                format!("{} coefficients for {} copies", c.len(), parts.len()),
            ));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        let mut out = vec![0.0; self.value(parts[0]).len()];
        for (k, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            if pv.shape() != shape.as_slice() {
                return Err(Error::shape("blend", "copies differ in shape"));
            }
            let ck = c.data()[k];
            out.iter_mut().zip(pv.data()).for_each(|(o, v)| *o += ck * v);
        }
        let rg = self.rg(coeffs) || parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(shape, out)?,
            Op::Blend {
                parts: parts.to_vec(),
                coeffs,
            },
            rg,
        )
    }

    /// Channel-wise blend: row `i` of the output is
    /// `sum_k coeffs[i, k] * parts[k][i]`, with `coeffs` of shape `[C, K]`.
    pub fn blend_channels(&mut self, parts: &[Var], coeffs: Var) -> Result<Var> {
        let c = self.value(coeffs);
        let first = self.value(*parts.first().ok_or_else(|| Error::shape("blend_channels", "no copies"))?);
        let rows = first.shape().first().copied().unwrap_or(1);
        let k = parts.len();
        if c.shape() != [rows, k] {
            return Err(Error::shape(
                "blend_channels",
                format!("coefficients {:?}, expected [{rows}, {k}]", c.shape()),
            ));
        }
        let shape = first.shape().to_vec();
        let len = first.row_len();
        let mut out = vec![0.0; first.len()];
        for (j, &p) in parts.iter().enumerate() {
            let pv = self.value(p);
            if pv.shape() != shape.as_slice() {
                return Err(Error::shape("blend_channels", "copies differ in shape"));
            }
            for i in 0..rows {
                let cij = c.data()[i * k + j];
                out[i * len..(i + 1) * len]
                    .iter_mut()
                    .zip(pv.row(i))
                    .for_each(|(o, v)| *o += cij * v);
            }
        }
        let rg = self.rg(coeffs) || parts.iter().any(|&p| self.rg(p));
        self.push(
            Tensor::new(shape, out)?,
            Op::BlendChannels {
                parts: parts.to_vec(),
                coeffs,
            },
            rg,
        )
    }

    /// Scalar `sum_j x_j * coeffs_j`.
    pub fn weighted_sum(&mut self, x: Var, coeffs: Vec<f64>) -> Result<Var> {
        let v = self.value(x);
        if v.len() != coeffs.len() {
            return Err(Error::shape("weighted_sum", format!("{} values, {} coefficients", v.len(), coeffs.len())));
        }
        let s = v.data().iter().zip(&coeffs).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::WeightedSum { x, coeffs }, rg)
    }

    /// Scalar `scale * sum_a u_a * (1/R) sum_i sum_b v[i, b] * table[a, b]`
    /// with `u` of length `A`, `v` of shape `[R, B]`, `table` row-major `A x B`.
    pub fn row_mean_bilinear(&mut self, u: Var, v: Var, table: Vec<f64>, scale: f64) -> Result<Var> {
        let (uv, vv) = (self.value(u), self.value(v));
        let a = uv.len();
        let b = *vv.shape().last().unwrap_or(&1);
        let rows = vv.len() / b.max(1);
        if table.len() != a * b || rows == 0 {
            return Err(Error::shape(
                "row_mean_bilinear",
                format!("table of {} entries for {a} x {b}", table.len()),
            ));
        }
        let col_mean = column_means(vv.data(), rows, b);
        let mut s = 0.0;
        for (ai, &ua) in uv.data().iter().enumerate() {
            let inner: f64 = col_mean.iter().enumerate().map(|(bi, &m)| m * table[ai * b + bi]).sum();
            s += ua * inner;
        }
        let rg = self.rg(u) || self.rg(v);
        self.push(
            Tensor::scalar(scale * s),
            Op::RowMeanBilinear { u, v, table, scale },
            rg,
        )
    }

    /// Mean softmax cross-entropy of `[N, C]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let s = v.shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::shape("cross_entropy", format!("logits {s:?}, {} labels", labels.len())));
        }
        let c = s[1];
        let n = s[0];
        let mut probs = Vec::with_capacity(v.len());
        let mut loss = 0.0;
        for (row, &y) in v.data().chunks(c).zip(labels) {
            if y >= c {
                return Err(Error::shape("cross_entropy", format!("label {y} out of range for {c} classes")));
            }
            let p = softmax_temperature(row, 1.0)?;
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            probs.extend(p);
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let v = self.value(pred);
        if v.len() != target.len() || target.is_empty() {
            return Err(Error::shape("mse", format!("{} predictions, {} targets", v.len(), target.len())));
        }
        let s: f64 = v.data().iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.rg(pred);
        self.push(
            Tensor::scalar(s / target.len() as f64),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            rg,
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|a| a * c).collect())?;
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    /// Propagates `d loss / d node` to every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Graph(format!(
                "loss node {} does not exist (graph has {} nodes); run the forward pass first",
                loss.0,
                self.nodes.len()
            )));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        // Only report gradients for nodes that asked for them.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let send = |v: Var, d: &[f64], grads: &mut [Option<Vec<f64>>]| {
            if self.rg(v) {
                accumulate(&mut grads[v.0], d);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, params } => {
                let (gx, gw, gb) = kernels::conv2d_backward(self.value(*x), self.value(*w), g, *params)?;
                send(*x, &gx, grads);
                send(*w, &gw, grads);
                if let Some(b) = b {
                    send(*b, &gb, grads);
                }
            }
            Op::Fc { x, w, b } => {
                let (gx, gw, gb) = kernels::fc_backward(self.value(*x), self.value(*w), g)?;
                send(*x, &gx, grads);
                send(*w, &gw, grads);
                if let Some(b) = b {
                    send(*b, &gb, grads);
                }
            }
            Op::Relu(x) => {
                let d: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&a, &gi)| if a > 0.0 { gi } else { 0.0 })
                    .collect();
                send(*x, &d, grads);
            }
            Op::Add(a, b) => {
                send(*a, g, grads);
                send(*b, g, grads);
            }
            Op::Pool {
                x,
                window,
                kind,
                winners,
            } => {
                let d = kernels::pool_backward(self.value(*x).shape(), *window, *kind, winners, g);
                send(*x, &d, grads);
            }
            Op::Reshape(x) => send(*x, g, grads),
            Op::Pact { x, clip } => {
                let c = self.value(*clip).item()?;
                let (gx, gc) = quant::pact_backward(self.value(*x).data(), c, g);
                send(*x, &gx, grads);
                send(*clip, &[gc], grads);
            }
            Op::WeightQuant(w) => {
                let d = quant::weight_fakequant_backward(self.value(*w), g);
                send(*w, &d, grads);
            }
            Op::Softmax { logits, tau } => {
                let s = node.value.data();
                let k = *node.value.shape().last().unwrap_or(&1);
                let mut d = vec![0.0; s.len()];
                for ((dr, sr), gr) in d.chunks_mut(k).zip(s.chunks(k)).zip(g.chunks(k)) {
                    let dot: f64 = sr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dr[j] = sr[j] * (gr[j] - dot) / tau;
                    }
                }
                send(*logits, &d, grads);
            }
            Op::BroadcastRows { x, rows } => {
                let k = g.len() / rows;
                let mut d = vec![0.0; k];
                for r in g.chunks(k) {
                    d.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                }
                send(*x, &d, grads);
            }
            Op::Blend { parts, coeffs } => {
                let c = self.value(*coeffs).data();
                let mut dc = vec![0.0; parts.len()];
                for (k, &p) in parts.iter().enumerate() {
                    let pv = self.value(p).data();
                    dc[k] = pv.iter().zip(g).map(|(a, b)| a * b).sum();
                    if self.rg(p) {
                        let dp: Vec<f64> = g.iter().map(|gi| c[k] * gi).collect();
                        send(p, &dp, grads);
                    }
                }
                send(*coeffs, &dc, grads);
            }
            Op::BlendChannels { parts, coeffs } => {
                let c = self.value(*coeffs).data();
                let k = parts.len();
                let first = self.value(parts[0]);
                let rows = first.shape().first().copied().unwrap_or(1);
                let len = first.row_len();
                let mut dc = vec![0.0; rows * k];
                for (j, &p) in parts.iter().enumerate() {
                    let pv = self.value(p);
                    let mut dp = vec![0.0; pv.len()];
                    for i in 0..rows {
                        let gr = &g[i * len..(i + 1) * len];
                        dc[i * k + j] = pv.row(i).iter().zip(gr).map(|(a, b)| a * b).sum();
                        let cij = c[i * k + j];
                        dp[i * len..(i + 1) * len]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(o, gi)| *o = cij * gi);
                    }
                    send(p, &dp, grads);
                }
                send(*coeffs, &dc, grads);
            }
            Op::WeightedSum { x, coeffs } => {
                let d: Vec<f64> = coeffs.iter().map(|c| c * g[0]).collect();
                send(*x, &d, grads);
            }
            Op::RowMeanBilinear { u, v, table, scale } => {
                let (uv, vv) = (self.value(*u).data(), self.value(*v));
                let b = *vv.shape().last().unwrap_or(&1);
                let rows = vv.len() / b;
                let col_mean = column_means(vv.data(), rows, b);
                let a = uv.len();
                let du: Vec<f64> = (0..a)
                    .map(|ai| g[0] * scale * (0..b).map(|bi| col_mean[bi] * table[ai * b + bi]).sum::<f64>())
                    .collect();
                let per_col: Vec<f64> = (0..b)
                    .map(|bi| g[0] * scale * (0..a).map(|ai| uv[ai] * table[ai * b + bi]).sum::<f64>() / rows as f64)
                    .collect();
                let dv: Vec<f64> = (0..rows * b).map(|j| per_col[j % b]).collect();
                send(*u, &du, grads);
                send(*v, &dv, grads);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = probs.len() / labels.len();
                let n = labels.len() as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * g[0] / n).collect();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * c + y] -= g[0] / n;
                }
                send(*logits, &d, grads);
            }
            Op::Mse { pred, target } => {
                let n = target.len() as f64;
                let d: Vec<f64> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(p, t)| 2.0 * (p - t) * g[0] / n)
                    .collect();
                send(*pred, &d, grads);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).len()];
                send(*x, &d, grads);
            }
            Op::Scale(x, c) => {
                let d: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                send(*x, &d, grads);
            }
        }
        Ok(())
    }
}

fn column_means(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut m = vec![0.0; cols];
    for r in data.chunks(cols) {
        m.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|a| *a /= rows as f64);
    m
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::Fc { .. } => "fc",
        Op::Relu(_) => "relu",
        Op::Add(..) => "add",
        Op::Pool { .. } => "pool",
        Op::Reshape(_) => "reshape",
        Op::Pact { .. } => "pact",
        Op::WeightQuant(_) => "weight_quant",
        Op::Softmax { .. } => "softmax",
        Op::BroadcastRows { .. } => "broadcast_rows",
        Op::Blend { .. } => "blend",
        Op::BlendChannels { .. } => "blend_channels",
        Op::WeightedSum { .. } => "weighted_sum",
        Op::RowMeanBilinear { .. } => "row_mean_bilinear",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::Mse { .. } => "mse",
        Op::Sum(_) => "sum",
        Op::Scale(..) => "scale",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_unit_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let s = g.sum(w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_requires_existing_scalar_loss() {
        let g = Graph::new();
        assert!(matches!(g.backward(Var(0)), Err(Error::Graph(_))));
        let mut g = Graph::new();
        let w = g.param(Tensor::ones(&[3]));
        assert!(matches!(g.backward(w), Err(Error::Graph(_))));
    }

    #[test]
    fn relu_gradient_is_zero_at_tie() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_zero_is_identity() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1.5, -2.0]));
        let z = g.constant(Tensor::zeros(&[2]));
        let y = g.add(a, z).unwrap();
        assert_eq!(g.value(y), g.value(a));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 2]));
        let w = g.param(Tensor::ones(&[3, 2]));
        let y = g.fc(x, w, None, "t").unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.get(w).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![f64::MAX, f64::MAX]));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite(_))));
    }
}
