//! Tape-based reverse-mode automatic differentiation.
//!
//! Every op appends a node holding its forward value. A node requires a
//! gradient when any of its inputs does; [`Tape::backward`] walks the nodes
//! in reverse insertion order (a reverse topological order, since inputs
//! always precede outputs) and consumes the tape.
//!
//! Broadcasting is limited to [`Tape::add_bias`], which adds a vector along
//! the trailing axis.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The differentiable op kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddBias,
    Mul,
    Scale,
    Softmax,
    LogSoftmax,
    LayerNorm,
    Gelu,
    Transpose,
    Reshape,
    Mean,
    Sum,
    Log,
    Gather,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    /// `aux` on the node holds the per-row reciprocal standard deviation.
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Gelu(Var),
    Transpose(Var),
    Reshape(Var),
    Mean(Var),
    Sum(Var),
    Log(Var),
    Gather { table: Var, rows: Vec<usize> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Mean(..) => OpKind::Mean,
            Op::Sum(..) => OpKind::Sum,
            Op::Log(..) => OpKind::Log,
            Op::Gather { .. } => OpKind::Gather,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    aux: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
///
/// Every leaf that required a gradient has an entry, zero-filled when the
/// leaf did not reach the loss.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let cols = shape.last().copied().unwrap_or(1);
    let numel: usize = shape.iter().product();
    if cols == 0 {
        (0, 0)
    } else {
        (numel / cols, cols)
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn gemm_nt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for (x, y) in g_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn gemm_tn_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

fn transpose_last2(data: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        let base = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[base + c * rows + r] = data[base + r * cols + c];
            }
        }
    }
    out
}

fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, out_row) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = libm::exp(v - max);
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out
}

fn log_softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, out_row) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
        let lse = max + libm::log(sum);
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + libm::tanh(u))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = libm::tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

fn add_into(slot: &mut Option<Vec<f64>>, contribution: &[f64]) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        None => *slot = Some(contribution.to_vec()),
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], var: Var, len: usize) -> &'a mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
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

    /// Registers `tensor` as a leaf; it is differentiable iff the tensor is
    /// flagged `requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        let mut value = tensor.clone();
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, requires_grad, Vec::new())
    }

    /// Registers a non-differentiable leaf.
    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, false, Vec::new())
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn kind(&self, var: Var) -> OpKind {
        self.nodes[var.0].op.kind()
    }

    /// Number of nodes that participate in differentiation.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.requires_grad && !matches!(n.op, Op::Leaf))
            .count()
    }

    /// Number of leaves flagged as requiring a gradient.
    pub fn grad_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.requires_grad && matches!(n.op, Op::Leaf))
            .count()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, aux: Vec<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownVar(var.0))
        }
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Matrix product. Supports `[m,k] x [k,n]` and batched
    /// `[b,m,k] x [b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        let (batch, m, k, n, out_shape) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n, vec![*m, *n]),
            ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => (*b, *m, *k, *n, vec![*b, *m, *n]),
            _ => return Err(mismatch()),
        };
        let mut out = vec![0.0; batch * m * n];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for bi in 0..batch {
                gemm_acc(
                    &da[bi * m * k..(bi + 1) * m * k],
                    &db[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MatMul(a, b), rg, Vec::new()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg, Vec::new()))
    }

    /// `x[..., j] + bias[j]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != sb.first() {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: sx.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let cols = sb[0];
        let b = self.value(bias).data();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(cols) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let value = Tensor::new(sx.to_vec(), data)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(value, Op::AddBias(x, bias), rg, Vec::new()))
    }

    /// Elementwise product of same-shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg, Vec::new()))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let data: Vec<f64> = self.value(x).data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Scale(x, factor), rg, Vec::new()))
    }

    fn require_rank(&self, op: &'static str, x: Var) -> Result<()> {
        if self.shape(x).is_empty() || self.value(x).last_dim() == 0 {
            return Err(Error::InvalidShape {
                op,
                shape: self.shape(x).to_vec(),
                reason: "needs a non-empty last axis",
            });
        }
        Ok(())
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        self.require_rank("softmax", x)?;
        let cols = self.value(x).last_dim();
        let data = softmax_rows(self.value(x).data(), cols);
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax(x), rg, Vec::new()))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        self.require_rank("log_softmax", x)?;
        let cols = self.value(x).last_dim();
        let data = log_softmax_rows(self.value(x).data(), cols);
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::LogSoftmax(x), rg, Vec::new()))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        self.require_rank("layer_norm", x)?;
        let cols = self.value(x).last_dim();
        for p in [gamma, beta] {
            if self.shape(p) != [cols] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let (rows, _) = rows_cols(self.shape(x));
        let mut out = vec![0.0; xs.len()];
        let mut rstd = Vec::with_capacity(rows);
        for (row, out_row) in xs.chunks(cols).zip(out.chunks_mut(cols)) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let r = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            rstd.push(r);
            for j in 0..cols {
                out_row[j] = (row[j] - mean) * r * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta }, rg, rstd))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Gelu(x), rg, Vec::new()))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let (batch, rows, cols, out_shape) = match shape.as_slice() {
            [r, c] => (1, *r, *c, vec![*c, *r]),
            [b, r, c] => (*b, *r, *c, vec![*b, *c, *r]),
            _ => {
                return Err(Error::InvalidShape {
                    op: "transpose",
                    shape,
                    reason: "expected rank 2 or 3",
                })
            }
        };
        let data = transpose_last2(self.value(x).data(), batch, rows, cols);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Transpose(x), rg, Vec::new()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let value = self.value(x).reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg, Vec::new()))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::InvalidShape {
                op: "mean",
                shape: self.shape(x).to_vec(),
                reason: "empty tensor",
            });
        }
        let m = self.value(x).data().iter().sum::<f64>() / n as f64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg, Vec::new()))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().sum::<f64>();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg, Vec::new()))
    }

    /// Elementwise natural log.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| libm::log(v)).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Log(x), rg, Vec::new()))
    }

    /// Selects rows of a `[v, c]` table, producing `[rows.len(), c]`.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        self.check(table)?;
        let shape = self.shape(table).to_vec();
        let [v, c] = shape[..] else {
            return Err(Error::InvalidShape {
                op: "gather_rows",
                shape,
                reason: "expected a rank-2 table",
            });
        };
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= v {
                return Err(Error::IndexOutOfRange {
                    what: "gather row",
                    index: r,
                    len: v,
                });
            }
            data.extend_from_slice(&src[r * c..(r + 1) * c]);
        }
        let value = Tensor::new(vec![rows.len(), c], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            rg,
            Vec::new(),
        ))
    }

    /// Reverse pass from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        self.check(loss)?;
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Keep only leaf gradients; interior buffers are dropped with the tape.
        for (idx, node) in self.nodes.iter().enumerate() {
            let is_grad_leaf = node.requires_grad && matches!(node.op, Op::Leaf);
            if is_grad_leaf {
                if grads[idx].is_none() {
                    grads[idx] = Some(vec![0.0; node.value.numel()]);
                }
            } else {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (batch, m, k, n) = match (sa, sb) {
                    ([m, k], [_, n]) => (1, *m, *k, *n),
                    ([bt, m, k], [_, _, n]) => (*bt, *m, *k, *n),
                    _ => unreachable!("matmul shapes validated in forward"),
                };
                if rg(*a) {
                    let bd = val(*b).data();
                    let slot = grad_slot(grads, *a, batch * m * k);
                    for bi in 0..batch {
                        gemm_nt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bd[bi * k * n..(bi + 1) * k * n],
                            &mut slot[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if rg(*b) {
                    let ad = val(*a).data();
                    let slot = grad_slot(grads, *b, batch * k * n);
                    for bi in 0..batch {
                        gemm_tn_acc(
                            &ad[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut slot[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if rg(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::AddBias(x, bias) => {
                if rg(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if rg(*bias) {
                    let cols = val(*bias).numel();
                    let slot = grad_slot(grads, *bias, cols);
                    for row in g.chunks(cols) {
                        for (s, v) in slot.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bd = val(*b).data();
                    let c: Vec<f64> = g.iter().zip(bd).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[a.0], &c);
                }
                if rg(*b) {
                    let ad = val(*a).data();
                    let c: Vec<f64> = g.iter().zip(ad).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[b.0], &c);
                }
            }
            Op::Scale(x, factor) => {
                if rg(*x) {
                    let c: Vec<f64> = g.iter().map(|v| v * factor).collect();
                    add_into(&mut grads[x.0], &c);
                }
            }
            Op::Softmax(x) => {
                if rg(*x) {
                    let y = node.value.data();
                    let cols = node.value.last_dim();
                    let mut c = vec![0.0; y.len()];
                    for ((yr, gr), cr) in y.chunks(cols).zip(g.chunks(cols)).zip(c.chunks_mut(cols)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            cr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    add_into(&mut grads[x.0], &c);
                }
            }
            Op::LogSoftmax(x) => {
                if rg(*x) {
                    let y = node.value.data();
                    let cols = node.value.last_dim();
                    let mut c = vec![0.0; y.len()];
                    for ((yr, gr), cr) in y.chunks(cols).zip(g.chunks(cols)).zip(c.chunks_mut(cols)) {
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..cols {
                            cr[j] = gr[j] - libm::exp(yr[j]) * gsum;
                        }
                    }
                    add_into(&mut grads[x.0], &c);
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xs = val(*x).data();
                let gm = val(*gamma).data();
                let cols = val(*x).last_dim();
                let rstd = &node.aux;
                let mut dg = vec![0.0; cols];
                let mut db = vec![0.0; cols];
                let mut dx = if rg(*x) { vec![0.0; xs.len()] } else { Vec::new() };
                let mut xhat = vec![0.0; cols];
                let mut dxhat = vec![0.0; cols];
                for (r, (xr, gr)) in xs.chunks(cols).zip(g.chunks(cols)).enumerate() {
                    let mean = xr.iter().sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        xhat[j] = (xr[j] - mean) * rstd[r];
                        dg[j] += gr[j] * xhat[j];
                        db[j] += gr[j];
                        dxhat[j] = gr[j] * gm[j];
                    }
                    if rg(*x) {
                        let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        let out = &mut dx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            out[j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                }
                if rg(*x) {
                    add_into(&mut grads[x.0], &dx);
                }
                if rg(*gamma) {
                    add_into(&mut grads[gamma.0], &dg);
                }
                if rg(*beta) {
                    add_into(&mut grads[beta.0], &db);
                }
            }
            Op::Gelu(x) => {
                if rg(*x) {
                    let xs = val(*x).data();
                    let c: Vec<f64> = g.iter().zip(xs).map(|(gv, &xv)| gv * gelu_grad(xv)).collect();
                    add_into(&mut grads[x.0], &c);
                }
            }
            Op::Transpose(x) => {
                if rg(*x) {
                    // g has the output shape; transposing it back recovers the input layout.
                    let (batch, rows, cols) = match node.value.shape() {
                        [r, c] => (1, *r, *c),
                        [b, r, c] => (*b, *r, *c),
                        _ => unreachable!("transpose rank validated in forward"),
                    };
                    let c = transpose_last2(g, batch, rows, cols);
                    add_into(&mut grads[x.0], &c);
                }
            }
            Op::Reshape(x) => {
                if rg(*x) {
                    add_into(&mut grads[x.0], g);
                }
            }
            Op::Mean(x) => {
                if rg(*x) {
                    let n = val(*x).numel();
                    let c = vec![g[0] / n as f64; n];
                    add_into(&mut grads[x.0], &c);
                }
            }
            Op::Sum(x) => {
                if rg(*x) {
                    let c = vec![g[0]; val(*x).numel()];
                    add_into(&mut grads[x.0], &c);
                }
            }
            Op::Log(x) => {
                if rg(*x) {
                    let xs = val(*x).data();
                    let c: Vec<f64> = g.iter().zip(xs).map(|(gv, xv)| gv / xv).collect();
                    add_into(&mut grads[x.0], &c);
                }
            }
            Op::Gather { table, rows } => {
                if rg(*table) {
                    let c = val(*table).last_dim();
                    let slot = grad_slot(grads, *table, val(*table).numel());
                    for (i, &r) in rows.iter().enumerate() {
                        for j in 0..c {
                            slot[r * c + j] += g[i * c + j];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_matches_hand_values() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.softmax(x).unwrap();
        let expected = [0.09003057, 0.24472847, 0.66524096];
        for (a, b) in tape.value(y).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let x = tape.constant(t(&[2, 3], &[1.0, -2.0, 3.5, 0.25, 7.0, -1.0]));
        let y = tape.matmul(i, x).unwrap();
        assert!(tape.value(y).bitwise_eq(tape.value(x)));
    }

    #[test]
    fn matmul_shape_error_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(alloc::format!("{err}").contains("matmul"));
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[0.3, -1.0, 2.0]).with_requires_grad());
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_of_squares_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad());
        let sq = tape.mul(x, x).unwrap();
        let m = tape.mean(sq).unwrap();
        let grads = tape.backward(m).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad());
        assert_eq!(tape.backward(x).unwrap_err(), Error::NonScalarLoss(vec![2]));
    }

    #[test]
    fn constants_are_not_recorded() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.add(a, a).unwrap();
        let _ = tape.sum(b).unwrap();
        assert_eq!(tape.recorded_ops(), 0);
        assert_eq!(tape.grad_leaves(), 0);
    }

    #[test]
    fn unreachable_leaf_gets_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_requires_grad());
        let y = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad());
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(y).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn add_bias_rejects_wrong_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(tape.add_bias(x, b), Err(Error::ShapeMismatch { op: "add_bias", .. })));
    }

    #[test]
    fn gather_rejects_out_of_range_rows() {
        let mut tape = Tape::new();
        let table = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(matches!(
            tape.gather_rows(table, &[1, 4]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }
}
