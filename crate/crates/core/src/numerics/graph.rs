//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as it is evaluated (a Wengert list).
//! [`Graph::backward`] walks the list in reverse from a scalar loss and
//! returns exact gradients for every leaf that requires them.
//!
//! The op set is closed: matmul, add/sub, mul, scale, softmax, log-softmax,
//! layer-norm, SiLU, concat, slice, sum and mean. Larger building blocks
//! (attention, linear layers, losses) are compositions of these.

use std::collections::BTreeMap;

use super::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::error::{RdmError, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// How the right operand of an elementwise op is broadcast over the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `[1, n]` (or `[n]`) repeated over the rows of an `m×n` operand.
    Row,
    /// single element.
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNT(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    /// Caches the per-row inverse standard deviation.
    LayerNorm(Var, Vec<f64>),
    Silu(Var),
    Concat(Vec<Var>, usize),
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::Silu(..) => "silu",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    failure: Option<&'static str>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; `None` when `v` does not require gradients or is
    /// unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients keyed by parameter name. Parameters the loss does not
    /// reach get an all-zero gradient.
    pub fn param_grads(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, v)| {
                let g = self
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]));
                (name.clone(), g)
            })
            .collect()
    }
}

const MASK_NEG: f64 = -1e9;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.failure.is_none() && !value.is_finite() {
            self.failure = Some(op.name());
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that is not differentiated.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An unnamed leaf that receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A named trainable leaf; its gradient appears in
    /// [`Gradients::param_grads`].
    pub fn param(&mut self, name: &str, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        v
    }

    /// Name of the first operation that produced a non-finite value.
    pub fn failure(&self) -> Option<&'static str> {
        self.failure
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(RdmError::contract(format!(
                "matmul: {:?} x {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(RdmError::contract(format!(
                "matmul_nt: {:?} x {:?}ᵀ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulNT(a, b), ng))
    }

    fn bcast(&self, a: Var, b: Var, op: &str) -> Result<Bcast> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape() == tb.shape() {
            Ok(Bcast::Same)
        } else if tb.len() == 1 {
            Ok(Bcast::Scalar)
        } else if tb.dims2().0 == 1 && tb.dims2().1 == ta.dims2().1 {
            Ok(Bcast::Row)
        } else {
            Err(RdmError::contract(format!(
                "{op}: cannot broadcast {:?} onto {:?}",
                tb.shape(),
                ta.shape()
            )))
        }
    }

    fn elementwise(&self, a: Var, b: Var, bc: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let ta = self.value(a);
        let tb = self.value(b).data();
        let (_, n) = ta.dims2();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Bcast::Same => tb[i],
                    Bcast::Row => tb[i % n],
                    Bcast::Scalar => tb[0],
                };
                f(x, y)
            })
            .collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    /// `a + b`, with `b` optionally broadcast as a row or a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.bcast(a, b, "add")?;
        let out = self.elementwise(a, b, bc, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b, bc), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.bcast(a, b, "sub")?;
        let out = self.elementwise(a, b, bc, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b, bc), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.bcast(a, b, "mul")?;
        let out = self.elementwise(a, b, bc, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b, bc), ng))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let ng = self.needs(a);
        self.push(out, Op::Scale(a, factor), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = t.dims2();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let ng = self.needs(a);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Softmax(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = t.dims2();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.needs(a);
        self.push(Tensor::from_parts(vec![m, n], out), Op::LogSoftmax(a), ng)
    }

    /// Row-wise normalization to zero mean, unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let (m, n) = t.dims2();
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(m);
        for row in out.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let ng = self.needs(a);
        self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::LayerNorm(a, inv_std),
            ng,
        )
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.needs(a);
        self.push(out, Op::Silu(a), ng)
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(RdmError::contract("concat: need ≥1 part and axis 0 or 1"));
        }
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.dims(p)).collect();
        let (r0, c0) = dims[0];
        let (rows, cols, data) = if axis == 0 {
            if dims.iter().any(|d| d.1 != c0) {
                return Err(RdmError::contract("concat rows: column counts differ"));
            }
            let rows = dims.iter().map(|d| d.0).sum();
            let mut data = Vec::with_capacity(rows * c0);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            (rows, c0, data)
        } else {
            if dims.iter().any(|d| d.0 != r0) {
                return Err(RdmError::contract("concat cols: row counts differ"));
            }
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(i));
                }
            }
            (r0, cols, data)
        };
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::Concat(parts.to_vec(), axis),
            ng,
        ))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(RdmError::contract(format!(
                "slice: axis {axis} range {start}..{} of {extent}",
                start + len
            )));
        }
        let src = self.value(a).data();
        let (shape, data) = if axis == 0 {
            (vec![len, n], src[start * n..(start + len) * n].to_vec())
        } else {
            let mut d = Vec::with_capacity(m * len);
            for i in 0..m {
                d.extend_from_slice(&src[i * n + start..i * n + start + len]);
            }
            (vec![m, len], d)
        };
        let ng = self.needs(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Slice {
                src: a,
                axis,
                start,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// `x · w + b` for `x: [m, in]`, `w: [in, out]`, `b: [out]` or `[1, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Scaled dot-product attention `softmax(q kᵀ / √d + mask) v`.
    ///
    /// `mask`, when given, is an additive `[rows(q), rows(k)]` constant;
    /// see [`block_mask`].
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<Var>) -> Result<Var> {
        let (_, dq) = self.dims(q);
        let (nk, dk) = self.dims(k);
        let (nv, _) = self.dims(v);
        if dq != dk || nk != nv {
            return Err(RdmError::contract(format!(
                "attention: q {:?}, k {:?}, v {:?}",
                self.value(q).shape(),
                self.value(k).shape(),
                self.value(v).shape()
            )));
        }
        let scores = self.matmul_nt(q, k)?;
        let scores = self.scale(scores, 1.0 / (dq as f64).sqrt());
        let scores = match mask {
            Some(m) => {
                if self.value(m).shape() != self.value(scores).shape() {
                    return Err(RdmError::contract("attention: mask shape"));
                }
                self.add(scores, m)?
            }
            None => scores,
        };
        let w = self.softmax(scores);
        self.matmul(w, v)
    }

    /// Runs reverse-mode differentiation from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if let Some(op) = self.failure {
            return Err(RdmError::Numeric { op: op.into() });
        }
        if self.value(loss).len() != 1 {
            return Err(RdmError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_parts(
            self.value(loss).shape().to_vec(),
            vec![1.0],
        ));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            params: self.params.clone(),
            shapes,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let op_name = node.op.name();
        let send = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| -> Result<()> {
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            if !t.is_finite() {
                return Err(RdmError::Numeric {
                    op: format!("{op_name} (backward)"),
                });
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
            Ok(())
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt(gd, self.value(*b).data(), m, n, k, &mut da);
                    send(*a, Tensor::from_parts(self.value(*a).shape().to_vec(), da), grads)?;
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn(self.value(*a).data(), gd, m, k, n, &mut db);
                    send(*b, Tensor::from_parts(self.value(*b).shape().to_vec(), db), grads)?;
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(*a);
                let (n, _) = self.dims(*b);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nn(gd, self.value(*b).data(), m, n, k, &mut da);
                    send(*a, Tensor::from_parts(self.value(*a).shape().to_vec(), da), grads)?;
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; n * k];
                    matmul_tn(gd, self.value(*a).data(), m, n, k, &mut db);
                    send(*b, Tensor::from_parts(self.value(*b).shape().to_vec(), db), grads)?;
                }
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.needs(*a) {
                    send(*a, g.clone(), grads)?;
                }
                if self.needs(*b) {
                    let db = self.reduce_bcast(g.data(), *b, *bc, node.value.dims2().1, |x, _| {
                        sign * x
                    });
                    send(*b, db, grads)?;
                }
            }
            Op::Mul(a, b, bc) => {
                let (_, n) = node.value.dims2();
                let bd = self.value(*b).data();
                let ad = self.value(*a).data();
                if self.needs(*a) {
                    let da = gd
                        .iter()
                        .enumerate()
                        .map(|(i, &x)| {
                            x * match bc {
                                Bcast::Same => bd[i],
                                Bcast::Row => bd[i % n],
                                Bcast::Scalar => bd[0],
                            }
                        })
                        .collect();
                    send(*a, Tensor::from_parts(self.value(*a).shape().to_vec(), da), grads)?;
                }
                if self.needs(*b) {
                    let db = self.reduce_bcast(gd, *b, *bc, n, |x, i| x * ad[i]);
                    send(*b, db, grads)?;
                }
            }
            Op::Scale(a, f) => send(*a, g.map(|x| x * f), grads)?,
            Op::Softmax(a) => {
                let (_, n) = node.value.dims2();
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)) {
                    let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - s);
                    }
                }
                send(*a, Tensor::from_parts(node.value.shape().to_vec(), dx), grads)?;
            }
            Op::LogSoftmax(a) => {
                let (_, n) = node.value.dims2();
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(n).zip(y.chunks(n)).zip(gd.chunks(n)) {
                    let s: f64 = gr.iter().sum();
                    for j in 0..n {
                        dr[j] = gr[j] - yr[j].exp() * s;
                    }
                }
                send(*a, Tensor::from_parts(node.value.shape().to_vec(), dx), grads)?;
            }
            Op::LayerNorm(a, inv_std) => {
                let (_, n) = node.value.dims2();
                let xhat = node.value.data();
                let mut dx = vec![0.0; xhat.len()];
                for (r, ((dr, xr), gr)) in dx
                    .chunks_mut(n)
                    .zip(xhat.chunks(n))
                    .zip(gd.chunks(n))
                    .enumerate()
                {
                    let mg = gr.iter().sum::<f64>() / n as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dr[j] = inv_std[r] * (gr[j] - mg - xr[j] * mgx);
                    }
                }
                send(*a, Tensor::from_parts(node.value.shape().to_vec(), dx), grads)?;
            }
            Op::Silu(a) => {
                let x = self.value(*a).data();
                let dx = x
                    .iter()
                    .zip(gd)
                    .map(|(&x, &g)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                send(*a, Tensor::from_parts(node.value.shape().to_vec(), dx), grads)?;
            }
            Op::Concat(parts, axis) => {
                let (rows, cols) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = self.dims(p);
                    if self.needs(p) {
                        let data = if *axis == 0 {
                            gd[offset * cols..(offset + pr) * cols].to_vec()
                        } else {
                            let mut d = Vec::with_capacity(pr * pc);
                            for i in 0..rows {
                                d.extend_from_slice(&gd[i * cols + offset..i * cols + offset + pc]);
                            }
                            d
                        };
                        send(p, Tensor::from_parts(vec![pr, pc], data), grads)?;
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice { src, axis, start } => {
                let (m, n) = self.dims(*src);
                let (sr, sc) = node.value.dims2();
                let mut d = vec![0.0; m * n];
                if *axis == 0 {
                    d[start * n..(start + sr) * n].copy_from_slice(gd);
                } else {
                    for i in 0..m {
                        d[i * n + start..i * n + start + sc].copy_from_slice(&gd[i * sc..(i + 1) * sc]);
                    }
                }
                send(*src, Tensor::from_parts(self.value(*src).shape().to_vec(), d), grads)?;
            }
            Op::Sum(a) => {
                send(*a, Tensor::full(self.value(*a).shape(), gd[0]), grads)?;
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                send(*a, Tensor::full(self.value(*a).shape(), gd[0] / n), grads)?;
            }
        }
        Ok(())
    }

    /// Sums `f(g_i, i)` back down to the shape of the broadcast operand `b`.
    fn reduce_bcast(
        &self,
        g: &[f64],
        b: Var,
        bc: Bcast,
        cols: usize,
        f: impl Fn(f64, usize) -> f64,
    ) -> Tensor {
        let shape = self.value(b).shape().to_vec();
        match bc {
            Bcast::Same => {
                Tensor::from_parts(shape, g.iter().enumerate().map(|(i, &x)| f(x, i)).collect())
            }
            Bcast::Row => {
                let mut d = vec![0.0; cols];
                for (i, &x) in g.iter().enumerate() {
                    d[i % cols] += f(x, i);
                }
                Tensor::from_parts(shape, d)
            }
            Bcast::Scalar => {
                let s = g.iter().enumerate().map(|(i, &x)| f(x, i)).sum();
                Tensor::from_parts(shape, vec![s])
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Additive mask letting query row `i` attend only to its own key block.
///
/// `block_sizes[i]` is the number of consecutive key rows owned by query
/// row `i`; blocks are laid out in query order.
pub fn block_mask(block_sizes: &[usize]) -> Tensor {
    let total: usize = block_sizes.iter().sum();
    let mut data = vec![MASK_NEG; block_sizes.len() * total];
    let mut start = 0;
    for (i, &len) in block_sizes.iter().enumerate() {
        data[i * total + start..i * total + start + len].fill(0.0);
        start += len;
    }
    Tensor::from_parts(vec![block_sizes.len(), total.max(1)], data)
}
