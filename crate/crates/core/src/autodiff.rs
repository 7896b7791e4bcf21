//! Reverse-mode automatic differentiation over dense row-major `f64` arrays.
//!
//! A [`Graph`] is a dynamic tape: every primitive appends one node whose
//! parents were appended before it, so insertion order is a topological
//! order and the backward sweep simply walks the tape in reverse.
//!
//! Parameters live outside the graph in [`Param`]s. A forward pass copies
//! them in as differentiable leaves ([`Graph::param`]); after
//! [`Graph::backward`] the caller folds the resulting [`Gradients`] back
//! into the parameters with [`Gradients::accumulate`]. Gradients accumulate
//! across calls until [`Param::zero_grad`].
//!
//! ```
//! use adac_core::autodiff::{Graph, Param, Tensor};
//!
//! let mut w = Param::new("w", Tensor::vector(vec![3.0]));
//! let mut g = Graph::new();
//! let wv = g.param(&w);
//! let sq = g.mul(wv, wv).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! grads.accumulate(wv, &mut w).unwrap();
//! assert_eq!(w.grad.data(), &[6.0]);
//! ```

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable {0} does not belong to this graph")]
    UnknownVar(usize),
    #[error("variable {input} does not influence output {output}")]
    NotInGraph { input: usize, output: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Dense row-major array. `shape == []` is a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::BadData {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `rows x cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equal-length rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AutodiffError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// `(rows, cols)` view of a 1-D or 2-D tensor. A vector is one row.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((1, *n)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2().expect("row() on a tensor that is not 1-D or 2-D");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Sum(usize),
    Mean(usize),
    SquaredDiff(usize, usize),
    Concat(Vec<usize>),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Constant | Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::SquaredDiff(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Tanh(a) | Op::Relu(a) | Op::Exp(a) | Op::Sum(a) | Op::Mean(a) => {
                vec![*a]
            }
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic tape of operations.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf gradients produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the swept output with respect to the leaf `var`, if it is
    /// reachable. Interior nodes are not retained.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let g = self.grads.get(var.0)?.as_ref()?;
        Some(Tensor {
            shape: self.shapes[var.0].clone(),
            data: g.clone(),
        })
    }

    /// Adds the gradient of `var` into `param.grad`. Unreached leaves add zero.
    pub fn accumulate(&self, var: Var, param: &mut Param) -> Result<()> {
        let shape = self
            .shapes
            .get(var.0)
            .ok_or(AutodiffError::UnknownVar(var.0))?;
        if shape.as_slice() != param.grad.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "accumulate",
                lhs: shape.clone(),
                rhs: param.grad.shape().to_vec(),
            });
        }
        if let Some(g) = &self.grads[var.0] {
            for (acc, v) in param.grad.data.iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok(())
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape.clone(),
        rhs: b.shape.clone(),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Leaf => true,
            other => other.parents().iter().any(|&p| self.nodes[p].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(AutodiffError::UnknownVar(v.0))
    }

    /// Non-differentiable input (observations, noise, fixed coefficients).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Differentiable leaf that is not a parameter (e.g. an action whose
    /// critic gradient is wanted).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Differentiable leaf holding a copy of `p`'s current value.
    pub fn param(&mut self, p: &Param) -> Var {
        self.push(p.value.clone(), Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        let (m, k) = match ta.shape.as_slice() {
            [m, k] => (*m, *k),
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let n = match tb.shape.as_slice() {
            [k2, n] if *k2 == k => *n,
            _ => return Err(mismatch("matmul", ta, tb)),
        };
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, &ta.data, &tb.data, &mut out);
        let t = Tensor {
            shape: vec![m, n],
            data: out,
        };
        Ok(self.push(t, Op::MatMul(a.0, b.0)))
    }

    /// `x[m, n] + bias[n]`, the bias broadcast over the batch rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.check(x)?, self.check(bias)?);
        let n = match tx.shape.as_slice() {
            [_, n] => *n,
            _ => return Err(mismatch("add_bias", tx, tb)),
        };
        let ok = matches!(tb.shape.as_slice(), [k] if *k == n)
            || matches!(tb.shape.as_slice(), [1, k] if *k == n);
        if !ok {
            return Err(mismatch("add_bias", tx, tb));
        }
        let mut out = tx.data.clone();
        add_bias_rows(&mut out, &tb.data);
        let t = Tensor {
            shape: tx.shape.clone(),
            data: out,
        };
        Ok(self.push(t, Op::AddBias(x.0, bias.0)))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.check(a)?, self.check(b)?);
        if ta.shape != tb.shape {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor {
            shape: ta.shape.clone(),
            data,
        };
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Elementwise `(a - b)^2`.
    pub fn squared_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(
            "squared_diff",
            a,
            b,
            |x, y| (x - y) * (x - y),
            Op::SquaredDiff(a.0, b.0),
        )
    }

    fn map_op(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let ta = &self.nodes[a.0].value;
        let t = Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(t, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map_op(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map_op(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map_op(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map_op(a, f64::exp, Op::Exp(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let m = t.data.iter().sum::<f64>() / t.data.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a.0))
    }

    /// Concatenates 2-D tensors with equal row counts along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.check(p)?;
            let (r, c) = match t.shape.as_slice() {
                [r, c] => (*r, *c),
                _ => {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat",
                        lhs: t.shape.clone(),
                        rhs: vec![],
                    })
                }
            };
            match rows {
                None => rows = Some(r),
                Some(r0) if r0 != r => {
                    return Err(AutodiffError::ShapeMismatch {
                        op: "concat",
                        lhs: vec![r0],
                        rhs: t.shape.clone(),
                    })
                }
                _ => {}
            }
            widths.push(c);
        }
        let rows = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        for i in 0..rows {
            let mut off = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = &self.nodes[p.0].value.data[i * w..(i + 1) * w];
                out[i * total + off..i * total + off + w].copy_from_slice(src);
                off += w;
            }
        }
        let t = Tensor {
            shape: vec![rows, total],
            data: out,
        };
        Ok(self.push(t, Op::Concat(parts.iter().map(|p| p.0).collect())))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let t = self.check(loss)?;
        if !t.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(t.shape.clone()));
        }
        Ok(self.sweep(loss, vec![1.0]))
    }

    /// Gradient of `sum(output)` with respect to `input`. For row-wise
    /// independent outputs (a critic over a batch) this is the per-row
    /// input gradient. Parameter gradients are not touched.
    pub fn grad_wrt_input(&self, output: Var, input: Var) -> Result<Tensor> {
        let n = self.check(output)?.len();
        self.check(input)?;
        if input.0 > output.0 || !self.nodes[input.0].requires_grad {
            return Err(AutodiffError::NotInGraph {
                input: input.0,
                output: output.0,
            });
        }
        let grads = self.sweep(output, vec![1.0; n]);
        grads.get(input).ok_or(AutodiffError::NotInGraph {
            input: input.0,
            output: output.0,
        })
    }

    fn sweep(&self, root: Var, seed: Vec<f64>) -> Gradients {
        let count = root.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; count];
        grads[root.0] = Some(seed);

        for i in (0..count).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if node.requires_grad {
                self.propagate(node, g, &mut grads);
            }
        }
        Gradients {
            grads,
            shapes: self.nodes[..count].iter().map(|n| n.value.shape.clone()).collect(),
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Sends `g`, the gradient of `node`, to its parents. Elementwise rules
    /// rewrite `g` in place and hand the buffer on.
    fn propagate(&self, node: &Node, mut g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let val = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = tb.shape[1];
                if self.wants(*a) {
                    // dA = dC * B^T
                    let bt = transpose(k, n, &tb.data);
                    let acc = slot(grads, *a, m * k);
                    gemm_nn(m, n, k, &g, &bt, acc);
                }
                if self.wants(*b) {
                    // dB = A^T * dC
                    let at = transpose(m, k, &ta.data);
                    let acc = slot(grads, *b, k * n);
                    gemm_nn(k, m, n, &at, &g, acc);
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*b) {
                    let n = val(*b).len();
                    let acc = slot(grads, *b, n);
                    for row in g.chunks_exact(n) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                }
                if self.wants(*x) {
                    give(grads, *x, g);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    if self.wants(*a) {
                        give(grads, *b, g.clone());
                    } else {
                        give(grads, *b, g);
                        return;
                    }
                }
                if self.wants(*a) {
                    give(grads, *a, g);
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    give(grads, *b, g.iter().map(|v| -v).collect());
                }
                if self.wants(*a) {
                    give(grads, *a, g);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*b) {
                    let other = &val(*a).data;
                    give(grads, *b, g.iter().zip(other).map(|(gi, o)| gi * o).collect());
                }
                if self.wants(*a) {
                    let other = &val(*b).data;
                    g.iter_mut().zip(other).for_each(|(gi, o)| *gi *= o);
                    give(grads, *a, g);
                }
            }
            Op::SquaredDiff(a, b) => {
                let (da, db) = (&val(*a).data, &val(*b).data);
                let d: Vec<f64> = (0..g.len()).map(|i| 2.0 * (da[i] - db[i]) * g[i]).collect();
                if self.wants(*b) {
                    give(grads, *b, d.iter().map(|v| -v).collect());
                }
                if self.wants(*a) {
                    give(grads, *a, d);
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    g.iter_mut().for_each(|v| *v *= c);
                    give(grads, *a, g);
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    let y = &node.value.data;
                    g.iter_mut().zip(y).for_each(|(v, y)| *v *= 1.0 - y * y);
                    give(grads, *a, g);
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let x = &val(*a).data;
                    g.iter_mut().zip(x).for_each(|(v, x)| {
                        if *x <= 0.0 {
                            *v = 0.0;
                        }
                    });
                    give(grads, *a, g);
                }
            }
            Op::Exp(a) => {
                if self.wants(*a) {
                    let y = &node.value.data;
                    g.iter_mut().zip(y).for_each(|(v, y)| *v *= y);
                    give(grads, *a, g);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    give(grads, *a, vec![g[0]; val(*a).len()]);
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let n = val(*a).len();
                    give(grads, *a, vec![g[0] / n as f64; n]);
                }
            }
            Op::Concat(parts) => {
                let rows = node.value.shape[0];
                let total = node.value.shape[1];
                let mut off = 0;
                for &p in parts {
                    let w = val(p).shape[1];
                    if self.wants(p) {
                        let acc = slot(grads, p, rows * w);
                        for i in 0..rows {
                            let src = &g[i * total + off..i * total + off + w];
                            for (s, v) in acc[i * w..(i + 1) * w].iter_mut().zip(src) {
                                *s += v;
                            }
                        }
                    }
                    off += w;
                }
            }
        }
    }
}

/// Adds `v` into slot `i`, taking ownership when the slot is empty.
fn give(grads: &mut [Option<Vec<f64>>], i: usize, v: Vec<f64>) {
    match &mut grads[i] {
        Some(acc) => axpy(1.0, &v, acc),
        empty => *empty = Some(v),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c[m, n] += a[m, k] * b[k, n]`, all row-major.
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    const MR: usize = 4;
    const NR: usize = 8;
    if n == 1 {
        for (ci, arow) in c.iter_mut().zip(a.chunks_exact(k)) {
            *ci += dot(arow, b);
        }
        return;
    }
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[0.0; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + NR]);
            }
            for p in 0..k {
                let bv: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().expect("block width");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + p];
                    for (x, y) in row.iter_mut().zip(bv) {
                        *x += av * y;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        if j < n {
            gemm_rows(i, i + MR, j, k, n, a, b, c);
        }
        i += MR;
    }
    gemm_rows(i, m, 0, k, n, a, b, c);
}

/// Left-to-right dot product over four interleaved partial sums.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (xs, ys) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in xr.iter().zip(yr) {
        total += a * b;
    }
    total
}

/// Rows `lo..hi`, columns `j0..n` of `c += a·b`.
#[allow(clippy::too_many_arguments)]
fn gemm_rows(lo: usize, hi: usize, j0: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in lo..hi {
        let crow = &mut c[i * n + j0..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n + j0..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub(crate) fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

pub(crate) fn add_bias_rows(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}
