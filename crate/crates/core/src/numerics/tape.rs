//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends one node holding its output [`Tensor`] and the
//! information its backward rule needs. [`Tape::backward`] walks the nodes in
//! exact reverse execution order, so gradient sums are accumulated in a fixed
//! order and repeated runs are bit-identical.

use super::linalg::{self, Cholesky};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Binary(Binary, Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Unary(Unary, Var),
    Softmax { x: Var, axis: usize },
    MaskedSoftmaxRows(Var),
    SolveSpd { g: Var, b: Var, chol: Cholesky, cols: usize },
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    NormalizeRows(Var, Vec<f64>),
    PairwiseSqDist(Var, Var),
    AddOuter(Var, Var),
    BceWithLogits(Var, Vec<f64>),
    SoftmaxCrossEntropy(Var, Vec<usize>, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Softmax over `len` entries starting at `start` with the given stride,
/// skipping entries where `mask` is false.
fn softmax_group(
    src: &[f64],
    dst: &mut [f64],
    start: usize,
    stride: usize,
    len: usize,
    mask: Option<&[bool]>,
) -> bool {
    let on = |t: usize| mask.map_or(true, |m| m[start + t * stride]);
    let mut max = f64::NEG_INFINITY;
    for t in 0..len {
        if on(t) {
            max = max.max(src[start + t * stride]);
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut total = 0.0;
    for t in 0..len {
        let idx = start + t * stride;
        let e = if on(t) { (src[idx] - max).exp() } else { 0.0 };
        dst[idx] = e;
        total += e;
    }
    for t in 0..len {
        dst[start + t * stride] /= total;
    }
    true
}

fn softmax_group_backward(
    y: &[f64],
    g: &[f64],
    dx: &mut [f64],
    start: usize,
    stride: usize,
    len: usize,
) {
    let mut inner = 0.0;
    for t in 0..len {
        let idx = start + t * stride;
        inner += g[idx] * y[idx];
    }
    for t in 0..len {
        let idx = start + t * stride;
        dx[idx] = y[idx] * (g[idx] - inner);
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    /// Clears every accumulated gradient so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        self.backward_done = false;
    }

    /// Records an input tensor. Its `requires_grad` flag is kept as given.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn variable(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires = inputs.iter().any(|v| self.requires_grad(*v));
        let value = Tensor::new(shape, values)
            .expect("operation produced an inconsistent tensor")
            .with_requires_grad(requires);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.rows() {
            return Err(Error::Dimension {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = linalg::matmul(ta.values(), tb.values(), m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let out = linalg::transpose(self.value(a).values(), r, c);
        Ok(self.push(vec![c, r], out, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() {
            return Err(Error::Dimension {
                op: "reshape",
                left: t.shape().to_vec(),
                right: shape,
            });
        }
        let values = t.values().to_vec();
        Ok(self.push(shape, values, Op::Reshape(a), &[a]))
    }

    /// Elementwise binary op. Shapes must match, or one side must hold a
    /// single element.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() {
            ta.shape().to_vec()
        } else if ta.len() == 1 {
            tb.shape().to_vec()
        } else if tb.len() == 1 {
            ta.shape().to_vec()
        } else {
            return Err(Error::Dimension {
                op: "elementwise",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        };
        let n: usize = shape.iter().product();
        let (va, vb) = (ta.values(), tb.values());
        let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        let f = match op {
            Binary::Add => |x: f64, y: f64| x + y,
            Binary::Sub => |x: f64, y: f64| x - y,
            Binary::Mul => |x: f64, y: f64| x * y,
        };
        let out = (0..n).map(|i| f(pick(va, i), pick(vb, i))).collect();
        Ok(self.push(shape, out, Op::Binary(op, a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let out = t.values().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push(shape, out, Op::Scale(a, factor), &[a])
    }

    /// Adds a row vector to every row of a matrix (bias broadcast).
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims2(m)?;
        let tr = self.value(row);
        if tr.len() != c {
            return Err(Error::Dimension {
                op: "add_row",
                left: self.value(m).shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        let rv = tr.values();
        let mut out = self.value(m).values().to_vec();
        for i in 0..r {
            for (o, b) in out[i * c..(i + 1) * c].iter_mut().zip(rv) {
                *o += b;
            }
        }
        let shape = self.value(m).shape().to_vec();
        Ok(self.push(shape, out, Op::AddRow(m, row), &[m, row]))
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Var {
        let t = self.value(x);
        let out = t
            .values()
            .iter()
            .map(|&v| match op {
                Unary::Sigmoid => sigmoid(v),
                Unary::Tanh => v.tanh(),
                Unary::LeakyRelu(s) => leaky_relu(v, s),
            })
            .collect();
        let shape = t.shape().to_vec();
        self.push(shape, out, Op::Unary(op, x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    /// Numerically stable softmax along `axis` (0 or 1 for matrices, 0 for vectors).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        let groups = softmax_groups(t.shape(), axis)?;
        let mut out = vec![0.0; t.len()];
        for &(start, stride, len) in &groups {
            softmax_group(t.values(), &mut out, start, stride, len, None);
        }
        let shape = t.shape().to_vec();
        Ok(self.push(shape, out, Op::Softmax { x, axis }, &[x]))
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries come out as exactly zero. Every row needs one open entry.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if mask.len() != r * c {
            return Err(Error::Dimension {
                op: "masked_softmax_rows",
                left: vec![r, c],
                right: vec![mask.len()],
            });
        }
        let mut out = vec![0.0; r * c];
        let src = self.value(x).values();
        for i in 0..r {
            if !softmax_group(src, &mut out, i * c, 1, c, Some(mask)) {
                return Err(Error::contract(format!("row {i} is fully masked")));
            }
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(shape, out, Op::MaskedSoftmaxRows(x), &[x]))
    }

    /// Solves `(G + ridge·I)·w = b` through a Cholesky factorization.
    /// `b` may be a vector of length N or an N×k matrix of right-hand sides.
    pub fn solve_spd(&mut self, g: Var, b: Var, ridge: f64) -> Result<Var> {
        if !(ridge >= 0.0) {
            return Err(Error::contract(format!("ridge must be >= 0, got {ridge}")));
        }
        let (tg, tb) = (self.value(g), self.value(b));
        let (n, n2) = tg.dims2()?;
        let (rows, cols) = match tb.shape() {
            [len] => (*len, 1),
            [r, c] => (*r, *c),
            _ => (0, 0),
        };
        if tg.ndim() != 2 || n != n2 || rows != n {
            return Err(Error::Dimension {
                op: "solve_spd",
                left: tg.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let gv = tg.values();
        for i in 0..n {
            for j in 0..i {
                let (x, y) = (gv[i * n + j], gv[j * n + i]);
                if (x - y).abs() > 1e-9 * x.abs().max(y.abs()).max(1.0) {
                    return Err(Error::contract(format!(
                        "solve_spd needs a symmetric matrix; entry ({i},{j}) differs from ({j},{i})"
                    )));
                }
            }
        }
        let chol = Cholesky::factor(gv, n, ridge)?;
        let out = chol.solve(tb.values(), cols);
        let shape = tb.shape().to_vec();
        Ok(self.push(shape, out, Op::SolveSpd { g, b, chol, cols }, &[g, b]))
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::contract(format!("row index {bad} out of range for {r} rows")));
        }
        if ids.is_empty() {
            return Err(Error::contract("gather_rows needs at least one index"));
        }
        let src = self.value(table).values();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        Ok(self.push(
            vec![ids.len(), c],
            out,
            Op::GatherRows(table, ids.to_vec()),
            &[table],
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if start >= end || end > r {
            return Err(Error::contract(format!("row slice {start}..{end} of {r} rows")));
        }
        let out = self.value(x).values()[start * c..end * c].to_vec();
        Ok(self.push(vec![end - start, c], out, Op::SliceRows(x, start), &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if start >= end || end > c {
            return Err(Error::contract(format!("column slice {start}..{end} of {c} columns")));
        }
        let src = self.value(x).values();
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        Ok(self.push(vec![r, w], out, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows needs at least one part"))?;
        let c = self.dims2(*first)?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims2(p)?;
            if pc != c {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.value(*first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p).values());
        }
        Ok(self.push(vec![rows, c], out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols needs at least one part"))?;
        let r = self.dims2(*first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pr != r {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.value(*first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.values().iter().sum::<f64>() / t.len() as f64;
        self.push(vec![1], vec![s], Op::Mean(x), &[x])
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        let src = self.value(x).values();
        let mut norms = Vec::with_capacity(r);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let norm = linalg::dot(row, row).sqrt();
            if !(norm > 0.0) {
                return Err(Error::DegenerateVector { index: i });
            }
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v / norm;
            }
            norms.push(norm);
        }
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(shape, out, Op::NormalizeRows(x, norms), &[x]))
    }

    /// `D[i][j] = ‖a_i − b_j‖²` for row sets `a` (P×d) and `b` (Q×d).
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, d) = self.dims2(a)?;
        let (q, d2) = self.dims2(b)?;
        if d != d2 {
            return Err(Error::Dimension {
                op: "pairwise_sq_dist",
                left: self.value(a).shape().to_vec(),
                right: self.value(b).shape().to_vec(),
            });
        }
        let (va, vb) = (self.value(a).values(), self.value(b).values());
        let mut out = vec![0.0; p * q];
        for i in 0..p {
            for j in 0..q {
                out[i * q + j] = va[i * d..(i + 1) * d]
                    .iter()
                    .zip(&vb[j * d..(j + 1) * d])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
            }
        }
        Ok(self.push(vec![p, q], out, Op::PairwiseSqDist(a, b), &[a, b]))
    }

    /// `E[i][j] = u_i + v_j`, with `u` and `v` read as flat vectors.
    pub fn add_outer(&mut self, u: Var, v: Var) -> Var {
        let (vu, vv) = (self.value(u).values(), self.value(v).values());
        let (n, m) = (vu.len(), vv.len());
        let mut out = Vec::with_capacity(n * m);
        for &x in vu {
            out.extend(vv.iter().map(|y| x + y));
        }
        self.push(vec![n, m], out, Op::AddOuter(u, v), &[u, v])
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.len() != targets.len() {
            return Err(Error::Dimension {
                op: "bce_with_logits",
                left: t.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        let n = t.len() as f64;
        let loss = t
            .values()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::BceWithLogits(logits, targets.to_vec()),
            &[logits],
        ))
    }

    /// Mean over rows of `-log softmax(row)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(logits)?;
        if targets.len() != r {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: vec![r, c],
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::contract(format!("target class {bad} out of {c} classes")));
        }
        let src = self.value(logits).values();
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for (i, &target) in targets.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[target];
            for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        loss /= r as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy(logits, targets.to_vec(), probs),
            &[logits],
        ))
    }

    /// Back-propagates from a scalar node. Runs at most once per
    /// [`Tape::reset_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Tape(
                "backward already ran on this tape; call reset_grads first".into(),
            ));
        }
        let t = self.value(loss);
        if t.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar objective, got shape {:?}",
                t.shape()
            )));
        }
        let requires = t.requires_grad();
        self.backward_done = true;
        if !requires {
            return Ok(());
        }
        self.nodes[loss.0].value.accumulate_grad(&[1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].value.take_grad() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(i, &op, &g);
            self.nodes[i].op = op;
            self.nodes[i].value.put_grad(Some(g));
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn acc(&mut self, v: Var, delta: &[f64]) {
        if self.needs(v) {
            self.nodes[v.0].value.accumulate_grad(delta);
        }
    }

    fn propagate(&mut self, i: usize, op: &Op, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).cols();
                if self.needs(*a) {
                    let da = linalg::matmul_nt(g, self.value(*b).values(), m, n, k);
                    self.acc(*a, &da);
                }
                if self.needs(*b) {
                    let db = linalg::matmul_tn(self.value(*a).values(), g, m, k, n);
                    self.acc(*b, &db);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().unwrap();
                let da = linalg::transpose(g, c, r);
                self.acc(*a, &da);
            }
            Op::Reshape(a) => self.acc(*a, g),
            Op::Binary(kind, a, b) => {
                let n = g.len();
                for (me, other, sign) in [(*a, *b, 1.0), (*b, *a, -1.0)] {
                    if !self.needs(me) {
                        continue;
                    }
                    let ov = self.value(other).values();
                    let pick = |i: usize| if ov.len() == 1 { ov[0] } else { ov[i] };
                    let full: Vec<f64> = match kind {
                        Binary::Add => g.to_vec(),
                        Binary::Sub if sign < 0.0 => g.iter().map(|x| -x).collect(),
                        Binary::Sub => g.to_vec(),
                        Binary::Mul => (0..n).map(|i| g[i] * pick(i)).collect(),
                    };
                    if self.value(me).len() == 1 && n != 1 {
                        let s: f64 = full.iter().sum();
                        self.acc(me, &[s]);
                    } else {
                        self.acc(me, &full);
                    }
                }
            }
            Op::Scale(a, f) => {
                let da: Vec<f64> = g.iter().map(|x| x * f).collect();
                self.acc(*a, &da);
            }
            Op::AddRow(m, row) => {
                self.acc(*m, g);
                if self.needs(*row) {
                    let c = self.value(*row).len();
                    let mut dr = vec![0.0; c];
                    for chunk in g.chunks(c) {
                        dr.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                    }
                    self.acc(*row, &dr);
                }
            }
            Op::Unary(kind, x) => {
                let y = self.nodes[i].value.values();
                let xv = self.value(*x).values();
                let dx: Vec<f64> = match kind {
                    Unary::Sigmoid => y.iter().zip(g).map(|(y, g)| g * y * (1.0 - y)).collect(),
                    Unary::Tanh => y.iter().zip(g).map(|(y, g)| g * (1.0 - y * y)).collect(),
                    Unary::LeakyRelu(s) => xv
                        .iter()
                        .zip(g)
                        .map(|(x, g)| if *x > 0.0 { *g } else { g * s })
                        .collect(),
                };
                self.acc(*x, &dx);
            }
            Op::Softmax { x, axis } => {
                let y = self.nodes[i].value.values();
                let groups = softmax_groups(self.nodes[i].value.shape(), *axis).unwrap();
                let mut dx = vec![0.0; y.len()];
                for (start, stride, len) in groups {
                    softmax_group_backward(y, g, &mut dx, start, stride, len);
                }
                self.acc(*x, &dx);
            }
            Op::MaskedSoftmaxRows(x) => {
                let (r, c) = self.nodes[i].value.dims2().unwrap();
                let y = self.nodes[i].value.values();
                let mut dx = vec![0.0; y.len()];
                for row in 0..r {
                    softmax_group_backward(y, g, &mut dx, row * c, 1, c);
                }
                self.acc(*x, &dx);
            }
            Op::SolveSpd {
                g: gm,
                b,
                chol,
                cols,
            } => {
                let n = chol.dim();
                let db = chol.solve(g, *cols);
                if self.needs(*gm) {
                    let w = self.nodes[i].value.values();
                    let outer = linalg::matmul_nt(&db, w, n, *cols, n);
                    let mut dg = vec![0.0; n * n];
                    for r in 0..n {
                        for c in 0..n {
                            dg[r * n + c] = -0.5 * (outer[r * n + c] + outer[c * n + r]);
                        }
                    }
                    self.acc(*gm, &dg);
                }
                self.acc(*b, &db);
            }
            Op::GatherRows(table, ids) => {
                if self.needs(*table) {
                    let c = self.value(*table).cols();
                    let mut dt = vec![0.0; self.value(*table).len()];
                    for (k, &row) in ids.iter().enumerate() {
                        for j in 0..c {
                            dt[row * c + j] += g[k * c + j];
                        }
                    }
                    self.acc(*table, &dt);
                }
            }
            Op::SliceRows(x, start) => {
                if self.needs(*x) {
                    let c = self.value(*x).cols();
                    let mut dx = vec![0.0; self.value(*x).len()];
                    dx[start * c..start * c + g.len()].copy_from_slice(g);
                    self.acc(*x, &dx);
                }
            }
            Op::SliceCols(x, start) => {
                if self.needs(*x) {
                    let (r, c) = self.value(*x).dims2().unwrap();
                    let w = g.len() / r;
                    let mut dx = vec![0.0; r * c];
                    for row in 0..r {
                        dx[row * c + start..row * c + start + w]
                            .copy_from_slice(&g[row * w..(row + 1) * w]);
                    }
                    self.acc(*x, &dx);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (r, total) = self.nodes[i].value.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut dp = Vec::with_capacity(r * w);
                        for row in 0..r {
                            dp.extend_from_slice(&g[row * total + offset..row * total + offset + w]);
                        }
                        self.acc(p, &dp);
                    }
                    offset += w;
                }
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(*x).len()];
                self.acc(*x, &dx);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let dx = vec![g[0] / n as f64; n];
                self.acc(*x, &dx);
            }
            Op::NormalizeRows(x, norms) => {
                let y = self.nodes[i].value.values();
                let c = self.nodes[i].value.cols();
                let mut dx = vec![0.0; y.len()];
                for (row, norm) in norms.iter().enumerate() {
                    let span = row * c..(row + 1) * c;
                    let inner = linalg::dot(&g[span.clone()], &y[span.clone()]);
                    for k in span {
                        dx[k] = (g[k] - y[k] * inner) / norm;
                    }
                }
                self.acc(*x, &dx);
            }
            Op::PairwiseSqDist(a, b) => {
                let (p, d) = self.value(*a).dims2().unwrap();
                let q = self.value(*b).rows();
                let (va, vb) = (self.value(*a).values(), self.value(*b).values());
                let mut da = vec![0.0; p * d];
                let mut db = vec![0.0; q * d];
                for r in 0..p {
                    for s in 0..q {
                        let coef = 2.0 * g[r * q + s];
                        for k in 0..d {
                            let diff = va[r * d + k] - vb[s * d + k];
                            da[r * d + k] += coef * diff;
                            db[s * d + k] -= coef * diff;
                        }
                    }
                }
                self.acc(*a, &da);
                self.acc(*b, &db);
            }
            Op::AddOuter(u, v) => {
                let (n, m) = self.nodes[i].value.dims2().unwrap();
                let du: Vec<f64> = (0..n).map(|r| g[r * m..(r + 1) * m].iter().sum()).collect();
                let mut dv = vec![0.0; m];
                for r in 0..n {
                    dv.iter_mut().zip(&g[r * m..(r + 1) * m]).for_each(|(d, x)| *d += x);
                }
                self.acc(*u, &du);
                self.acc(*v, &dv);
            }
            Op::BceWithLogits(z, targets) => {
                let zv = self.value(*z).values();
                let n = zv.len() as f64;
                let dz: Vec<f64> = zv
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n)
                    .collect();
                self.acc(*z, &dz);
            }
            Op::SoftmaxCrossEntropy(z, targets, probs) => {
                let c = self.value(*z).cols();
                let r = targets.len() as f64;
                let mut dz: Vec<f64> = probs.iter().map(|p| g[0] * p / r).collect();
                for (row, &t) in targets.iter().enumerate() {
                    dz[row * c + t] -= g[0] / r;
                }
                self.acc(*z, &dz);
            }
        }
    }
}

/// `(start, stride, len)` for every softmax group of a tensor along `axis`.
fn softmax_groups(shape: &[usize], axis: usize) -> Result<Vec<(usize, usize, usize)>> {
    match (shape, axis) {
        ([n], 0) => Ok(vec![(0, 1, *n)]),
        ([r, c], 1) => Ok((0..*r).map(|i| (i * c, 1, *c)).collect()),
        ([r, c], 0) => Ok((0..*c).map(|j| (j, *c, *r)).collect()),
        _ => Err(Error::contract(format!(
            "softmax axis {axis} invalid for shape {shape:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_row_col() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2).unwrap());
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).values(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let ab = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(ab).values(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![2, 3]).unwrap());
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn elementwise_trivial_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);
        let x = tape.constant(Tensor::scalar(-2.0));
        let l = tape.leaky_relu(x, 0.01);
        assert!(close(tape.value(l).item(), -0.02, 1e-15));
    }

    #[test]
    fn elementwise_rejects_incompatible_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2]).unwrap());
        let b = tape.constant(Tensor::zeros(vec![3]).unwrap());
        assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut tape = Tape::new();
        let s = tape.variable(Tensor::scalar(2.0));
        let v = tape.variable(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let p = tape.mul(s, v).unwrap();
        let total = tape.sum(p);
        tape.backward(total).unwrap();
        assert_eq!(tape.grad(s).unwrap(), &[6.0]);
        assert_eq!(tape.grad(v).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn softmax_trivial_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 3]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        for v in tape.value(y).values() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
        let x = tape.constant(Tensor::vector(vec![1000.0, 0.0]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        let out = tape.value(y).values();
        assert!(close(out[0], 1.0, 1e-12) && close(out[1], 0.0, 1e-12));
    }

    #[test]
    fn softmax_matches_high_precision_values() {
        // mpmath, 30 digits: exp(k) / (e + e^2 + e^3)
        let expected = [
            0.090_030_573_170_380_458,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        for (v, e) in tape.value(y).values().iter().zip(expected) {
            assert!(close(*v, e, 1e-15), "{v} vs {e}");
        }
    }

    #[test]
    fn softmax_along_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap());
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).values(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(tape.softmax(x, 2).is_err());
    }

    #[test]
    fn masked_softmax_zeroes_closed_entries() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 5.0, 1.0]]).unwrap());
        let y = tape.masked_softmax_rows(x, &[true, false, true]).unwrap();
        assert_eq!(tape.value(y).values(), &[0.5, 0.0, 0.5]);
        assert!(tape.masked_softmax_rows(x, &[false; 3]).is_err());
    }

    #[test]
    fn solve_spd_trivial_systems() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::identity(3).unwrap());
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        let w = tape.solve_spd(g, b, 0.0).unwrap();
        assert_eq!(tape.value(w).values(), &[1.0, 2.0, 3.0]);

        let g = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap());
        let b = tape.constant(Tensor::vector(vec![2.0, 8.0]).unwrap());
        let w = tape.solve_spd(g, b, 0.0).unwrap();
        let out = tape.value(w).values();
        assert!(close(out[0], 1.0, 1e-15) && close(out[1], 2.0, 1e-15));
    }

    #[test]
    fn solve_spd_singular_carries_pivot() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let b = tape.constant(Tensor::vector(vec![1.0, 1.0]).unwrap());
        assert!(matches!(
            tape.solve_spd(g, b, 0.0),
            Err(Error::Singular { pivot: 1 })
        ));
        assert!(tape.solve_spd(g, b, -1.0).is_err());
    }

    #[test]
    fn backward_twice_is_rejected_until_reset() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
        assert!(matches!(tape.backward(y), Err(Error::Tape(_))));
        tape.reset_grads();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn normalize_rejects_zero_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        assert!(matches!(
            tape.normalize_rows(x),
            Err(Error::DegenerateVector { index: 1 })
        ));
    }

    #[test]
    fn cross_entropy_vanishes_on_confident_targets() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[vec![60.0, 0.0], vec![0.0, 60.0]]).unwrap());
        let l = tape.softmax_cross_entropy(z, &[0, 1]).unwrap();
        assert!(tape.value(l).item() <= 1e-9);
        let z = tape.constant(Tensor::vector(vec![60.0, -60.0, -60.0, 60.0]).unwrap());
        let b = tape.bce_with_logits(z, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(tape.value(b).item() <= 1e-9);
    }
}
