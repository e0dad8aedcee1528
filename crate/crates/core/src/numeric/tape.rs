//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Tape`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Every operation appends a node; [`Tape::backward`] walks the nodes in
//! reverse and returns gradients for every trainable parameter and every
//! leaf created with `requires_grad`. Parameter values are never copied
//! onto the tape.

use std::collections::{BTreeMap, HashMap};

use super::params::{Gradients, ParamId, ParamStore};
use super::{NumericError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Value {
    Owned(Tensor),
    Param(ParamId),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    AddN(Vec<Var>),
    MaxN(Vec<Var>),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Embedding(Var, Vec<usize>),
    StraightThrough(Var),
    PickNegative(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericError {
    NumericError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
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

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(1024),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant or input tensor. Gradients are reported for it when the
    /// tensor was built with `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let ng = t.requires_grad();
        self.push(t, Op::Leaf, ng)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let ng = self.store.is_trainable(id);
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: ng,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape("add", a, b)?;
        let t = zip(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape("sub", a, b)?;
        let t = zip(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericError> {
        self.same_shape("mul", a, b)?;
        let t = zip(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// `a[r, c] + bias[c]` for every row `r`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericError> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.numel() != ta.cols() {
            return Err(mismatch("add_bias", ta, tb));
        }
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % c])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(t, Op::AddBias(a, bias), ng))
    }

    fn check_col(&self, op: &'static str, a: Var, col: Var) -> Result<(), NumericError> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(mismatch(op, ta, tc));
        }
        Ok(())
    }

    /// Scales row `r` of `a` by `col[r]`; `col` has shape `[rows, 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumericError> {
        self.check_col("mul_col", a, col)?;
        let (ta, tc) = (self.value(a), self.value(col));
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * tc.data()[i / c])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(t, Op::MulCol(a, col), ng))
    }

    /// Divides row `r` of `a` by `col[r]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var, NumericError> {
        self.check_col("div_col", a, col)?;
        let (ta, tc) = (self.value(a), self.value(col));
        let c = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x / tc.data()[i / c])
            .collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(col);
        Ok(self.push(t, Op::DivCol(a, col), ng))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var, NumericError> {
        let first = *xs.first().ok_or(NumericError::EmptyInput("add_n"))?;
        let mut acc = self.value(first).clone();
        for &x in &xs[1..] {
            let t = self.value(x);
            if t.shape() != acc.shape() {
                return Err(mismatch("add_n", &acc, t));
            }
            for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(acc.with_requires_grad(false), Op::AddN(xs.to_vec()), ng))
    }

    /// Elementwise maximum of equally shaped tensors; the gradient goes to
    /// the first argument attaining the maximum.
    pub fn max_n(&mut self, xs: &[Var]) -> Result<Var, NumericError> {
        let first = *xs.first().ok_or(NumericError::EmptyInput("max_n"))?;
        let mut acc = self.value(first).clone();
        for &x in &xs[1..] {
            let t = self.value(x);
            if t.shape() != acc.shape() {
                return Err(mismatch("max_n", &acc, t));
            }
            for (a, &b) in acc.data_mut().iter_mut().zip(t.data()) {
                if b > *a {
                    *a = b;
                }
            }
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        Ok(self.push(acc.with_requires_grad(false), Op::MaxN(xs.to_vec()), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |x| x * c);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |x| x + c);
        let ng = self.ng(a);
        self.push(t, Op::AddScalar(a), ng)
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = map(self.value(a), sigmoid);
        let ng = self.ng(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::tanh);
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    /// Absolute value; the derivative at 0 is taken as 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::abs);
        let ng = self.ng(a);
        self.push(t, Op::Abs(a), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = Tensor::zeros(ta.shape());
        let c = ta.cols();
        for r in 0..ta.rows() {
            softmax_row(ta.row(r), &mut out.data_mut()[r * c..(r + 1) * c]);
        }
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = Tensor::zeros(ta.shape());
        let c = ta.cols();
        for r in 0..ta.rows() {
            let row = ta.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            for (o, &x) in out.data_mut()[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Concatenates 2-D tensors along the column axis.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var, NumericError> {
        let first = *xs.first().ok_or(NumericError::EmptyInput("concat_cols"))?;
        let rows = self.value(first).rows();
        for &x in xs {
            let t = self.value(x);
            if t.shape().len() != 2 || t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(first), t));
            }
        }
        let total: usize = xs.iter().map(|&x| self.value(x).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(r));
            }
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        let t = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(t, Op::ConcatCols(xs.to_vec()), ng))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericError> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || start >= end || end > ta.cols() {
            return Err(NumericError::SliceOutOfRange {
                shape: ta.shape().to_vec(),
                start,
                end,
            });
        }
        let rows = ta.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&ta.row(r)[start..end]);
        }
        let t = Tensor::new(vec![rows, end - start], out)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::SliceCols(a, start), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Row sums of a matrix, shape `[rows, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let rows = data.len();
        let ng = self.ng(a);
        self.push(
            Tensor::new(vec![rows, 1], data).expect("rows > 0"),
            Op::SumCols(a),
            ng,
        )
    }

    /// Rows `ids` of a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericError> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(NumericError::InvalidShape(tt.shape().to_vec()));
        }
        if ids.is_empty() {
            return Err(NumericError::EmptyInput("embedding"));
        }
        let (vocab, dim) = (tt.shape()[0], tt.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(NumericError::IndexOutOfRange {
                    index: id,
                    len: vocab,
                });
            }
            out.extend_from_slice(tt.row(id));
        }
        let t = Tensor::new(vec![ids.len(), dim], out)?;
        let ng = self.ng(table);
        Ok(self.push(t, Op::Embedding(table, ids.to_vec()), ng))
    }

    /// Forward value `hard`, gradient passed unchanged to `soft`.
    pub fn straight_through(&mut self, soft: Var, hard: Tensor) -> Result<Var, NumericError> {
        let ts = self.value(soft);
        if ts.shape() != hard.shape() {
            return Err(mismatch("straight_through", ts, &hard));
        }
        let ng = self.ng(soft);
        Ok(self.push(
            hard.with_requires_grad(false),
            Op::StraightThrough(soft),
            ng,
        ))
    }

    /// `-a[r, idx[r]]` for every row, shape `[rows, 1]`. Applied to
    /// log-probabilities this is the per-row negative log-likelihood.
    pub fn pick_negative(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericError> {
        let ta = self.value(a);
        if idx.len() != ta.rows() {
            return Err(NumericError::ShapeMismatch {
                op: "pick_negative",
                left: ta.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let c = ta.cols();
        let mut out = Vec::with_capacity(idx.len());
        for (r, &k) in idx.iter().enumerate() {
            if k >= c {
                return Err(NumericError::IndexOutOfRange { index: k, len: c });
            }
            out.push(-ta.row(r)[k]);
        }
        let t = Tensor::new(vec![idx.len(), 1], out)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::PickNegative(a, idx.to_vec()), ng))
    }

    /// Per-row cross-entropy of `logits` against class indices, `[rows, 1]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NumericError> {
        let logp = self.log_softmax(logits);
        self.pick_negative(logp, labels)
    }

    /// Gradients of the scalar `loss` with respect to every trainable
    /// parameter and every `requires_grad` leaf it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericError> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(NumericError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        let mut leaves = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, Var(i), &g, &mut grads);
            match node.op {
                Op::Param(id) => {
                    let shape = self.store.value(id).shape().to_vec();
                    out.map.insert(id, Tensor::new(shape, g)?);
                }
                Op::Leaf => {
                    let shape = self.value(Var(i)).shape().to_vec();
                    leaves.insert(Var(i), Tensor::new(shape, g)?);
                }
                _ => {}
            }
        }
        out.leaves = leaves;
        Ok(out)
    }

    fn propagate(&self, op: &Op, this: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.value(v).numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (ad, bd) = (ta.data(), tb.data());
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ad[i * k + p];
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, x)| *o += x)
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x)
                });
                acc(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x)
                });
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += x * y;
                    }
                });
            }
            Op::AddBias(a, bias) => {
                let c = self.value(*a).cols();
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x)
                });
                acc(*bias, &mut |gb| {
                    for (i, x) in g.iter().enumerate() {
                        gb[i % c] += x;
                    }
                });
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let c = ta.cols();
                acc(*a, &mut |ga| {
                    for (i, (o, x)) in ga.iter_mut().zip(g).enumerate() {
                        *o += x * tc.data()[i / c];
                    }
                });
                acc(*col, &mut |gc| {
                    for (i, (x, y)) in g.iter().zip(ta.data()).enumerate() {
                        gc[i / c] += x * y;
                    }
                });
            }
            Op::DivCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let c = ta.cols();
                acc(*a, &mut |ga| {
                    for (i, (o, x)) in ga.iter_mut().zip(g).enumerate() {
                        *o += x / tc.data()[i / c];
                    }
                });
                acc(*col, &mut |gc| {
                    for (i, (x, y)) in g.iter().zip(ta.data()).enumerate() {
                        let d = tc.data()[i / c];
                        gc[i / c] -= x * y / (d * d);
                    }
                });
            }
            Op::AddN(xs) => {
                for &x in xs {
                    acc(x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, y)| *o += y));
                }
            }
            Op::MaxN(xs) => {
                let out = self.value(this).data();
                let mut claimed = vec![false; out.len()];
                for &x in xs {
                    let xv = self.value(x).data();
                    let hits: Vec<usize> = (0..out.len())
                        .filter(|&i| !claimed[i] && xv[i] == out[i])
                        .collect();
                    for &i in &hits {
                        claimed[i] = true;
                    }
                    acc(x, &mut |gx| {
                        for &i in &hits {
                            gx[i] += g[i];
                        }
                    });
                }
            }
            Op::Scale(a, c) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x * c)
                });
            }
            Op::AddScalar(a) => {
                acc(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(o, x)| *o += x)
                });
            }
            Op::Sigmoid(a) => {
                let y = self.value(this).data();
                acc(*a, &mut |ga| {
                    for ((o, x), s) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * s * (1.0 - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.value(this).data();
                acc(*a, &mut |ga| {
                    for ((o, x), t) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * (1.0 - t * t);
                    }
                });
            }
            Op::Abs(a) => {
                let xs = self.value(*a).data();
                acc(*a, &mut |ga| {
                    for ((o, x), v) in ga.iter_mut().zip(g).zip(xs) {
                        let s = if *v > 0.0 {
                            1.0
                        } else if *v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *o += x * s;
                    }
                });
            }
            Op::Softmax(a) => {
                let y = self.value(this);
                let c = y.cols();
                acc(*a, &mut |ga| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            ga[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = self.value(this);
                let c = y.cols();
                acc(*a, &mut |ga| {
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = &g[r * c..(r + 1) * c];
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            ga[r * c + j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                });
            }
            Op::ConcatCols(xs) => {
                let total = self.value(this).cols();
                let mut offset = 0;
                for &x in xs {
                    let w = self.value(x).cols();
                    acc(x, &mut |gx| {
                        let rows = gx.len() / w;
                        for r in 0..rows {
                            for j in 0..w {
                                gx[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let total = self.value(*a).cols();
                let w = self.value(this).cols();
                acc(*a, &mut |ga| {
                    let rows = ga.len() / total;
                    for r in 0..rows {
                        for j in 0..w {
                            ga[r * total + start + j] += g[r * w + j];
                        }
                    }
                });
            }
            Op::Sum(a) => {
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0] / n));
            }
            Op::SumCols(a) => {
                let c = self.value(*a).cols();
                acc(*a, &mut |ga| {
                    for (i, o) in ga.iter_mut().enumerate() {
                        *o += g[i / c];
                    }
                });
            }
            Op::Embedding(table, ids) => {
                let d = self.value(*table).cols();
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::StraightThrough(soft) => {
                acc(*soft, &mut |gs| {
                    gs.iter_mut().zip(g).for_each(|(o, x)| *o += x)
                });
            }
            Op::PickNegative(a, idx) => {
                let c = self.value(*a).cols();
                acc(*a, &mut |ga| {
                    for (r, &k) in idx.iter().enumerate() {
                        ga[r * c + k] -= g[r];
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).data(), &[0.5]);
    }

    #[test]
    fn softmax_of_uniform_logits() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let y = tape.softmax(x);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a_vals: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
        let i3 = tape.constant(Tensor::identity(3));
        let a = tape.constant(t(&[3, 3], &a_vals));
        let y = tape.matmul(i3, a).unwrap();
        assert_eq!(tape.value(y).data(), a_vals.as_slice());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn quadratic_gradient() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(t(&[2], &[1.0, 2.0]).with_requires_grad(true));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(0.0), true);
        let mut tape = Tape::new(&store);
        let wv = tape.param(w);
        let s = tape.sigmoid(wv);
        let loss = tape.sum(s);
        let grads = tape.backward(loss).unwrap();
        assert_abs_diff_eq!(grads.get(w).unwrap().data()[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::zeros(&[3]).with_requires_grad(true));
        let y = tape.sigmoid(x);
        assert!(matches!(tape.backward(y), Err(NumericError::NotScalar(_))));
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::scalar(1.0), false);
        let mut tape = Tape::new(&store);
        let wv = tape.param(w);
        let loss = tape.sum(wv);
        assert!(tape.backward(loss).unwrap().get(w).is_none());
    }

    #[test]
    fn straight_through_passes_gradient() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let soft = tape.leaf(t(&[2], &[0.3, 0.8]).with_requires_grad(true));
        let st = tape.straight_through(soft, t(&[2], &[0.0, 1.0])).unwrap();
        assert_eq!(tape.value(st).data(), &[0.0, 1.0]);
        let scaled = tape.scale(st, 3.0);
        let loss = tape.sum(scaled);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(soft).unwrap().data(), &[3.0, 3.0]);
    }
}
