//! Define-by-run reverse-mode tape.
//!
//! Every primitive evaluates eagerly and appends a node; `backward` walks the
//! nodes in reverse. Nodes only reference earlier nodes, so insertion order is
//! a topological order.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Axis selector for concatenation and gathering on rank-2 tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Names of the supported primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    LeakyRelu,
    Concat,
    SegmentSoftmax,
    AvgPool1d,
    Gather,
    Sum,
    Mean,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::LeakyRelu => "leaky_relu",
            Primitive::Concat => "concat",
            Primitive::SegmentSoftmax => "segment_softmax",
            Primitive::AvgPool1d => "avg_pool1d",
            Primitive::Gather => "gather",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Primitive {
    type Err = AutodiffError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        const ALL: [Primitive; 13] = [
            Primitive::MatMul,
            Primitive::Add,
            Primitive::Sub,
            Primitive::Mul,
            Primitive::Sigmoid,
            Primitive::Tanh,
            Primitive::LeakyRelu,
            Primitive::Concat,
            Primitive::SegmentSoftmax,
            Primitive::AvgPool1d,
            Primitive::Gather,
            Primitive::Sum,
            Primitive::Mean,
        ];
        ALL.into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| AutodiffError::Unsupported(s.to_string()))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu { input: Var, alpha: f64 },
    Concat { inputs: Vec<Var>, axis: Axis },
    SegmentSoftmax { input: Var, offsets: Arc<[usize]> },
    AvgPool1d { input: Var, kernel: usize },
    Gather { input: Var, axis: Axis, indices: Arc<[usize]> },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => Primitive::MatMul,
            Op::Add(..) => Primitive::Add,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::Sigmoid(_) => Primitive::Sigmoid,
            Op::Tanh(_) => Primitive::Tanh,
            Op::LeakyRelu { .. } => Primitive::LeakyRelu,
            Op::Concat { .. } => Primitive::Concat,
            Op::SegmentSoftmax { .. } => Primitive::SegmentSoftmax,
            Op::AvgPool1d { .. } => Primitive::AvgPool1d,
            Op::Gather { .. } => Primitive::Gather,
            Op::Sum(_) => Primitive::Sum,
            Op::Mean(_) => Primitive::Mean,
        })
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Sigmoid(x) | Op::Tanh(x) | Op::Sum(x) | Op::Mean(x) => vec![*x],
            Op::LeakyRelu { input, .. }
            | Op::SegmentSoftmax { input, .. }
            | Op::AvgPool1d { input, .. }
            | Op::Gather { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One recorded primitive application.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeRecord {
    pub primitive: Primitive,
    pub inputs: Vec<Var>,
    pub output: Var,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: Primitive, detail: String) -> AutodiffError {
    AutodiffError::Shape { op: op.name(), detail }
}

fn dims(t: &Tensor, op: Primitive) -> Result<(usize, usize), AutodiffError> {
    t.dims().ok_or_else(|| shape_err(op, format!("expected rank-2 tensor, got shape {:?}", t.shape())))
}

/// Broadcast output shape for elementwise ops: each dim must match or be 1.
fn broadcast_dims(a: (usize, usize), b: (usize, usize), op: Primitive) -> Result<(usize, usize), AutodiffError> {
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else if y == 1 {
            Some(x)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(shape_err(op, format!("cannot broadcast {}x{} with {}x{}", a.0, a.1, b.0, b.1))),
    }
}

fn elementwise(a: &Tensor, b: &Tensor, op: Primitive, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
    let (ar, ac) = dims(a, op)?;
    let (br, bc) = dims(b, op)?;
    let (r, c) = broadcast_dims((ar, ac), (br, bc), op)?;
    let (ad, bd) = (a.data(), b.data());
    if ar == br && ac == bc {
        return Ok(Tensor::matrix(r, c, ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()));
    }
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let ia = if ar == 1 { 0 } else { i };
        let ib = if br == 1 { 0 } else { i };
        for j in 0..c {
            let x = ad[ia * ac + if ac == 1 { 0 } else { j }];
            let y = bd[ib * bc + if bc == 1 { 0 } else { j }];
            out.push(f(x, y));
        }
    }
    Ok(Tensor::matrix(r, c, out))
}

/// Sums a broadcast gradient back down to `(rows, cols)`.
fn reduce_to(g: &Tensor, rows: usize, cols: usize) -> Tensor {
    let (gr, gc) = g.dims().expect("rank-2 gradient");
    if gr == rows && gc == cols {
        return g.clone();
    }
    let mut out = Tensor::zeros(rows, cols);
    let od = out.data_mut();
    let gd = g.data();
    for i in 0..gr {
        let oi = if rows == 1 { 0 } else { i };
        for j in 0..gc {
            let oj = if cols == 1 { 0 } else { j };
            od[oi * cols + oj] += gd[i * gc + j];
        }
    }
    out
}

/// `a (m x k) @ b (k x n)`; zero entries of `a` are skipped so incidence
/// matrices cost O(nnz).
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn leaky_relu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * x
    }
}

/// Mean of a window, refined once so a constant window returns its value exactly.
fn window_mean(values: impl Iterator<Item = f64> + Clone, k: usize) -> f64 {
    let kf = k as f64;
    let m = values.clone().sum::<f64>() / kf;
    let correction = values.map(|v| v - m).sum::<f64>() / kf;
    m + correction
}

fn clamp_index(t: isize, len: usize) -> usize {
    t.clamp(0, len as isize - 1) as usize
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Primitive applications in evaluation order.
    pub fn records(&self) -> Vec<TapeRecord> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                n.op.primitive().map(|p| TapeRecord { primitive: p, inputs: n.op.inputs(), output: Var(i) })
            })
            .collect()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op) -> Var {
        let rg = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Applies an attribute-free primitive by name. Primitives that carry
    /// attributes (concat, softmax segments, pooling width, gather indices)
    /// have dedicated methods; LeakyReLU uses the default slope of 0.01.
    pub fn apply(&mut self, primitive: Primitive, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let arity = |n: usize| -> Result<(), AutodiffError> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(AutodiffError::Contract(format!("{primitive} takes {n} inputs, got {}", inputs.len())))
            }
        };
        match primitive {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => {
                arity(2)?;
                let (a, b) = (inputs[0], inputs[1]);
                match primitive {
                    Primitive::MatMul => self.matmul(a, b),
                    Primitive::Add => self.add(a, b),
                    Primitive::Sub => self.sub(a, b),
                    _ => self.mul(a, b),
                }
            }
            Primitive::Sigmoid => arity(1).map(|_| self.sigmoid(inputs[0])),
            Primitive::Tanh => arity(1).map(|_| self.tanh(inputs[0])),
            Primitive::LeakyRelu => arity(1).map(|_| self.leaky_relu(inputs[0], 0.01)),
            Primitive::Sum => arity(1).map(|_| self.sum(inputs[0])),
            Primitive::Mean => arity(1).map(|_| self.mean(inputs[0])),
            other => Err(AutodiffError::Contract(format!("{other} needs attributes; call its method directly"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let op = Primitive::MatMul;
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = dims(av, op)?;
        let (k2, n) = dims(bv, op)?;
        if k != k2 {
            return Err(shape_err(op, format!("{m}x{k} @ {k2}x{n}")));
        }
        let out = Tensor::matrix(m, n, matmul_raw(av.data(), bv.data(), m, k, n));
        Ok(self.push_op(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = elementwise(self.value(a), self.value(b), Primitive::Add, |x, y| x + y)?;
        Ok(self.push_op(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = elementwise(self.value(a), self.value(b), Primitive::Sub, |x, y| x - y)?;
        Ok(self.push_op(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = elementwise(self.value(a), self.value(b), Primitive::Mul, |x, y| x * y)?;
        Ok(self.push_op(out, Op::Mul(a, b)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push_op(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push_op(out, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        let out = self.value(x).map(|v| leaky_relu(v, alpha));
        self.push_op(out, Op::LeakyRelu { input: x, alpha })
    }

    pub fn concat(&mut self, inputs: &[Var], axis: Axis) -> Result<Var, AutodiffError> {
        let op = Primitive::Concat;
        if inputs.is_empty() {
            return Err(shape_err(op, "no inputs".into()));
        }
        let shapes = inputs.iter().map(|&v| dims(self.value(v), op)).collect::<Result<Vec<_>, _>>()?;
        let out = match axis {
            Axis::Rows => {
                let cols = shapes[0].1;
                if let Some(bad) = shapes.iter().find(|s| s.1 != cols) {
                    return Err(shape_err(op, format!("row concat needs {cols} columns, got {}", bad.1)));
                }
                let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                Tensor::vstack(&parts)
            }
            Axis::Cols => {
                let rows = shapes[0].0;
                if let Some(bad) = shapes.iter().find(|s| s.0 != rows) {
                    return Err(shape_err(op, format!("column concat needs {rows} rows, got {}", bad.0)));
                }
                let total: usize = shapes.iter().map(|s| s.1).sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row_slice(r));
                    }
                }
                Tensor::matrix(rows, total, data)
            }
        };
        Ok(self.push_op(out, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Softmax over contiguous row segments `offsets[s]..offsets[s + 1]`,
    /// applied independently per column.
    pub fn segment_softmax(&mut self, x: Var, offsets: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let op = Primitive::SegmentSoftmax;
        let xv = self.value(x);
        let (rows, cols) = dims(xv, op)?;
        let valid = offsets.first() == Some(&0)
            && offsets.last() == Some(&rows)
            && offsets.windows(2).all(|w| w[0] <= w[1]);
        if !valid {
            return Err(shape_err(op, format!("segment offsets do not partition {rows} rows")));
        }
        let mut out = vec![0.0; rows * cols];
        let d = xv.data();
        for seg in offsets.windows(2) {
            let (lo, hi) = (seg[0], seg[1]);
            if lo == hi {
                continue;
            }
            for c in 0..cols {
                let max = (lo..hi).map(|r| d[r * cols + c]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for r in lo..hi {
                    let e = (d[r * cols + c] - max).exp();
                    out[r * cols + c] = e;
                    total += e;
                }
                for r in lo..hi {
                    out[r * cols + c] /= total;
                }
            }
        }
        let out = Tensor::matrix(rows, cols, out);
        Ok(self.push_op(out, Op::SegmentSoftmax { input: x, offsets }))
    }

    /// Moving average along columns with an odd window and replicate padding;
    /// output has the input's shape.
    pub fn avg_pool1d(&mut self, x: Var, kernel: usize) -> Result<Var, AutodiffError> {
        let op = Primitive::AvgPool1d;
        if kernel == 0 || kernel % 2 == 0 {
            return Err(shape_err(op, format!("kernel must be odd and positive, got {kernel}")));
        }
        let xv = self.value(x);
        let (rows, len) = dims(xv, op)?;
        if len == 0 {
            return Err(shape_err(op, "empty sequence".into()));
        }
        let half = (kernel / 2) as isize;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            let row = xv.row_slice(r);
            for t in 0..len as isize {
                let window = (t - half..=t + half).map(|s| row[clamp_index(s, len)]);
                out.push(window_mean(window, kernel));
            }
        }
        let out = Tensor::matrix(rows, len, out);
        Ok(self.push_op(out, Op::AvgPool1d { input: x, kernel }))
    }

    pub fn gather(&mut self, x: Var, axis: Axis, indices: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let op = Primitive::Gather;
        let xv = self.value(x);
        let (rows, cols) = dims(xv, op)?;
        let bound = if axis == Axis::Rows { rows } else { cols };
        if let Some(bad) = indices.iter().find(|&&i| i >= bound) {
            return Err(shape_err(op, format!("index {bad} out of range for {axis:?} of size {bound}")));
        }
        let out = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(indices.len() * cols);
                for &i in indices.iter() {
                    data.extend_from_slice(xv.row_slice(i));
                }
                Tensor::matrix(indices.len(), cols, data)
            }
            Axis::Cols => {
                let mut data = Vec::with_capacity(rows * indices.len());
                for r in 0..rows {
                    let row = xv.row_slice(r);
                    data.extend(indices.iter().map(|&j| row[j]));
                }
                Tensor::matrix(rows, indices.len(), data)
            }
        };
        Ok(self.push_op(out, Op::Gather { input: x, axis, indices }))
    }

    /// Contiguous column range, expressed as a gather.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let idx: Arc<[usize]> = (start..start + len).collect();
        self.gather(x, Axis::Cols, idx)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push_op(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.len().max(1) as f64;
        let s = v.data().iter().sum::<f64>() / n;
        self.push_op(Tensor::scalar(s), Op::Mean(x))
    }

    /// Reverse sweep from a scalar `loss`. Every trainable leaf gets a
    /// gradient; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        let lv = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| AutodiffError::Contract(format!("loss {loss:?} is not on this tape")))?;
        if lv.value.len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(lv.value.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if node.requires_grad {
                    if grads[i].is_none() {
                        let (r, c) = node.value.dims().unwrap_or((node.value.len(), 1));
                        grads[i] = Some(Tensor::zeros(r, c));
                    }
                } else {
                    grads[i] = None;
                }
            } else if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let (gr, gc) = g.dims().expect("rank-2 gradient");
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims().unwrap();
                let n = bv.cols();
                if self.requires_grad(*a) {
                    // dA = dC @ B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da));
                }
                if self.requires_grad(*b) {
                    // dB = A^T @ dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, &x) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * x;
                            }
                        }
                    }
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.requires_grad(*a) {
                    let (r, c) = self.value(*a).dims().unwrap();
                    self.accumulate(grads, *a, reduce_to(g, r, c));
                }
                if self.requires_grad(*b) {
                    let (r, c) = self.value(*b).dims().unwrap();
                    let gb = if sign < 0.0 { g.map(|v| -v) } else { g.clone() };
                    self.accumulate(grads, *b, reduce_to(&gb, r, c));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let full = elementwise(g, bv, Primitive::Mul, |x, y| x * y).expect("shapes checked in forward");
                    let (r, c) = av.dims().unwrap();
                    self.accumulate(grads, *a, reduce_to(&full, r, c));
                }
                if self.requires_grad(*b) {
                    let full = elementwise(g, av, Primitive::Mul, |x, y| x * y).expect("shapes checked in forward");
                    let (r, c) = bv.dims().unwrap();
                    self.accumulate(grads, *b, reduce_to(&full, r, c));
                }
            }
            Op::Sigmoid(x) => {
                let d = g.data().iter().zip(out.data()).map(|(gv, s)| gv * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, Tensor::matrix(gr, gc, d));
            }
            Op::Tanh(x) => {
                let d = g.data().iter().zip(out.data()).map(|(gv, t)| gv * (1.0 - t * t)).collect();
                self.accumulate(grads, *x, Tensor::matrix(gr, gc, d));
            }
            Op::LeakyRelu { input, alpha } => {
                let xv = self.value(*input);
                let d = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(gv, &x)| if x > 0.0 { *gv } else { alpha * gv })
                    .collect();
                self.accumulate(grads, *input, Tensor::matrix(gr, gc, d));
            }
            Op::Concat { inputs, axis } => match axis {
                Axis::Rows => {
                    let mut row = 0;
                    for &v in inputs {
                        let (r, c) = self.value(v).dims().unwrap();
                        let part = g.data()[row * c..(row + r) * c].to_vec();
                        self.accumulate(grads, v, Tensor::matrix(r, c, part));
                        row += r;
                    }
                }
                Axis::Cols => {
                    let mut col = 0;
                    for &v in inputs {
                        let (r, c) = self.value(v).dims().unwrap();
                        let mut part = Vec::with_capacity(r * c);
                        for i in 0..r {
                            part.extend_from_slice(&g.data()[i * gc + col..i * gc + col + c]);
                        }
                        self.accumulate(grads, v, Tensor::matrix(r, c, part));
                        col += c;
                    }
                }
            },
            Op::SegmentSoftmax { input, offsets } => {
                let mut d = vec![0.0; gr * gc];
                let (s, gd) = (out.data(), g.data());
                for seg in offsets.windows(2) {
                    for c in 0..gc {
                        let dot: f64 = (seg[0]..seg[1]).map(|r| gd[r * gc + c] * s[r * gc + c]).sum();
                        for r in seg[0]..seg[1] {
                            d[r * gc + c] = s[r * gc + c] * (gd[r * gc + c] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::matrix(gr, gc, d));
            }
            Op::AvgPool1d { input, kernel } => {
                let half = (*kernel / 2) as isize;
                let inv = 1.0 / *kernel as f64;
                let mut d = vec![0.0; gr * gc];
                for r in 0..gr {
                    for t in 0..gc as isize {
                        let gv = g.data()[r * gc + t as usize] * inv;
                        for s in t - half..=t + half {
                            d[r * gc + clamp_index(s, gc)] += gv;
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::matrix(gr, gc, d));
            }
            Op::Gather { input, axis, indices } => {
                let (r, c) = self.value(*input).dims().unwrap();
                let mut d = Tensor::zeros(r, c);
                let dd = d.data_mut();
                match axis {
                    Axis::Rows => {
                        for (k, &i) in indices.iter().enumerate() {
                            for j in 0..c {
                                dd[i * c + j] += g.data()[k * c + j];
                            }
                        }
                    }
                    Axis::Cols => {
                        for i in 0..r {
                            for (k, &j) in indices.iter().enumerate() {
                                dd[i * c + j] += g.data()[i * gc + k];
                            }
                        }
                    }
                }
                self.accumulate(grads, *input, d);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).dims().unwrap();
                self.accumulate(grads, *x, Tensor::filled(r, c, g.data()[0]));
            }
            Op::Mean(x) => {
                let (r, c) = self.value(*x).dims().unwrap();
                let n = (r * c).max(1) as f64;
                self.accumulate(grads, *x, Tensor::filled(r, c, g.data()[0] / n));
            }
        }
    }
}
