//! Recording graph for reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended
//! in evaluation order, so the node list is already a topological order
//! and [`Graph::backward`] simply walks it in reverse. Parameters are
//! borrowed from the [`ParameterStore`] rather than copied; their
//! gradients come back as a [`Gradients`] value that the caller folds
//! into the store with [`Gradients::accumulate_into`].

use std::borrow::Cow;

use super::params::{ParamId, ParameterStore};
use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Reduction / normalisation direction.
///
/// `Rows` collapses the row dimension (result is one row, like numpy
/// `axis=0`); `Cols` collapses the column dimension (result is one
/// column, `axis=1`). `softmax(x, Axis::Cols)` therefore makes every row
/// sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Input(usize),
    Constant,
    Param(ParamId),
    Gather { param: ParamId, ids: Vec<usize> },
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Transpose(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Scale(usize, f64),
    ClampMin(usize, f64),
    ScaleRows(usize, Vec<f64>),
    MaskRows(usize, Vec<bool>),
    Softmax(usize, Axis),
    Sum(usize, Axis),
    Mean(usize, Axis),
    SumAll(usize),
    SumSquares(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    store: Option<&'p ParameterStore>,
    nodes: Vec<Node<'p>>,
    inputs: Vec<usize>,
    kinks: Vec<bool>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph with no parameter store; only inputs and constants.
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            inputs: Vec::new(),
            kinks: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParameterStore) -> Self {
        Graph {
            store: Some(store),
            ..Graph::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 × 1` node. Panics otherwise.
    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "Graph::scalar on a {:?} node", m.shape());
        m[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Sign pattern of every ReLU / clamp input seen so far. Two forward
    /// passes with equal signatures took the same branch at every kink.
    pub fn kink_signature(&self) -> &[bool] {
        &self.kinks
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Matrix, op: Op, parents: &[usize]) -> Var {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    fn store(&self) -> &'p ParameterStore {
        self.store
            .expect("graph was created without a parameter store")
    }

    /// A differentiable leaf whose gradient is reported by
    /// [`Gradients::input`].
    pub fn input(&mut self, value: Matrix) -> Var {
        let idx = self.inputs.len();
        let v = self.push(Cow::Owned(value), Op::Input(idx), true);
        self.inputs.push(v.0);
        v
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Cow::Owned(value), Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let p = self.store().get(id);
        let needs_grad = p.tensor.requires_grad;
        self.push(Cow::Borrowed(&p.tensor.value), Op::Param(id), needs_grad)
    }

    /// Rows `ids` of parameter `id`, e.g. an embedding lookup.
    pub fn gather_rows(&mut self, id: ParamId, ids: &[usize]) -> Result<Var> {
        let p = self.store().get(id);
        let table = &p.tensor.value;
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (r, &i) in ids.iter().enumerate() {
            if i >= table.rows() {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row {i} out of range for {:?} `{}`", table.shape(), p.name),
                ));
            }
            out.row_mut(r).copy_from_slice(table.row(i));
        }
        let needs_grad = p.tensor.requires_grad;
        Ok(self.push(
            Cow::Owned(out),
            Op::Gather {
                param: id,
                ids: ids.to_vec(),
            },
            needs_grad,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} · {:?}", x.shape(), y.shape()),
            ));
        }
        let out = x.matmul(y);
        Ok(self.push_op(out, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push_op(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push_op(out, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push_op(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    /// `x + 1·bias` where `bias` is a single row. The only broadcast.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xm, bm) = (self.value(x), self.value(bias));
        if bm.rows() != 1 || bm.cols() != xm.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", xm.shape(), bm.shape()),
            ));
        }
        let mut out = xm.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bm.row(0)) {
                *o += b;
            }
        }
        Ok(self.push_op(out, Op::AddRow(x.0, bias.0), &[x.0, bias.0]))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(p) => self.shape(*p).0,
            None => return Err(Error::shape("concat_cols", "no inputs")),
        };
        if let Some(bad) = parts.iter().find(|p| self.shape(**p).0 != rows) {
            return Err(Error::shape(
                "concat_cols",
                format!("{rows} rows vs {:?}", self.shape(*bad)),
            ));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push_op(out, Op::ConcatCols(ids.clone()), &ids))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(p) => self.shape(*p).1,
            None => return Err(Error::shape("concat_rows", "no inputs")),
        };
        if let Some(bad) = parts.iter().find(|p| self.shape(**p).1 != cols) {
            return Err(Error::shape(
                "concat_rows",
                format!("{cols} cols vs {:?}", self.shape(*bad)),
            ));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).as_slice());
        }
        let rows = data.len() / cols.max(1);
        let out = Matrix::from_vec(rows, cols, data);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push_op(out, Op::ConcatRows(ids.clone()), &ids))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("[{start}, {}) of {:?}", start + len, m.shape()),
            ));
        }
        let cols = m.cols();
        let out = Matrix::from_vec(
            len,
            cols,
            m.as_slice()[start * cols..(start + len) * cols].to_vec(),
        );
        Ok(self.push_op(out, Op::SliceRows(x.0, start), &[x.0]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let m = self.value(x);
        if start + len > m.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("[{start}, {}) of {:?}", start + len, m.shape()),
            ));
        }
        let out = m.columns(start, len);
        Ok(self.push_op(out, Op::SliceCols(x.0, start), &[x.0]))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        self.push_op(out, Op::Transpose(x.0), &[x.0])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push_op(out, Op::Tanh(x.0), &[x.0])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push_op(out, Op::Sigmoid(x.0), &[x.0])
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let m = &self.nodes[x.0].value;
        self.kinks.extend(m.as_slice().iter().map(|&v| v > 0.0));
        let out = m.map(|v| if v > 0.0 { v } else { 0.0 });
        self.push_op(out, Op::Relu(x.0), &[x.0])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push_op(out, Op::Exp(x.0), &[x.0])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        self.push_op(out, Op::Log(x.0), &[x.0])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push_op(out, Op::Scale(x.0, c), &[x.0])
    }

    /// `max(x, floor)`; no gradient flows where the floor is active.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let m = &self.nodes[x.0].value;
        self.kinks.extend(m.as_slice().iter().map(|&v| v > floor));
        let out = m.map(|v| v.max(floor));
        self.push_op(out, Op::ClampMin(x.0, floor), &[x.0])
    }

    /// Multiplies row `i` by `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        let m = self.value(x);
        if factors.len() != m.rows() {
            return Err(Error::shape(
                "scale_rows",
                format!("{} factors for {:?}", factors.len(), m.shape()),
            ));
        }
        let mut out = m.clone();
        for (r, &f) in factors.iter().enumerate() {
            out.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push_op(out, Op::ScaleRows(x.0, factors.to_vec()), &[x.0]))
    }

    /// Keeps rows where `keep[i]` and writes exact zeros elsewhere.
    pub fn mask_rows(&mut self, x: Var, keep: &[bool]) -> Result<Var> {
        let m = self.value(x);
        if keep.len() != m.rows() {
            return Err(Error::shape(
                "mask_rows",
                format!("{} flags for {:?}", keep.len(), m.shape()),
            ));
        }
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for (r, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            out.row_mut(r).copy_from_slice(m.row(r));
        }
        Ok(self.push_op(out, Op::MaskRows(x.0, keep.to_vec()), &[x.0]))
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let m = self.value(x);
        let out = match axis {
            Axis::Cols => softmax_rows(m),
            Axis::Rows => softmax_rows(&m.transpose()).transpose(),
        };
        self.push_op(out, Op::Softmax(x.0, axis), &[x.0])
    }

    pub fn sum(&mut self, x: Var, axis: Axis) -> Var {
        let out = reduce_sum(self.value(x), axis);
        self.push_op(out, Op::Sum(x.0, axis), &[x.0])
    }

    pub fn mean(&mut self, x: Var, axis: Axis) -> Var {
        let m = self.value(x);
        let count = match axis {
            Axis::Rows => m.rows(),
            Axis::Cols => m.cols(),
        } as f64;
        let out = reduce_sum(m, axis).map(|v| v / count);
        self.push_op(out, Op::Mean(x.0, axis), &[x.0])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum());
        self.push_op(out, Op::SumAll(x.0), &[x.0])
    }

    /// Σ x² as a `1 × 1` node.
    pub fn sum_squares(&mut self, x: Var) -> Var {
        let out = Matrix::scalar(self.value(x).sum_squares());
        self.push_op(out, Op::SumSquares(x.0), &[x.0])
    }

    /// Row-wise layer normalisation with a learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let m = self.value(x);
        let d = m.cols();
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(p) != (1, d) {
                return Err(Error::shape(
                    "layer_norm",
                    format!("{name} {:?} for input {:?}", self.shape(p), m.shape()),
                ));
            }
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut normalized = Matrix::zeros(m.rows(), d);
        let mut inv_std = Vec::with_capacity(m.rows());
        let mut out = Matrix::zeros(m.rows(), d);
        for r in 0..m.rows() {
            let row = m.row(r);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std.push(s);
            for c in 0..d {
                let xh = (row[c] - mu) * s;
                normalized[(r, c)] = xh;
                out[(r, c)] = xh * g[(0, c)] + b[(0, c)];
            }
        }
        Ok(self.push_op(
            out,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                normalized,
                inv_std,
            },
            &[x.0, gamma.0, beta.0],
        ))
    }

    /// Reverse sweep from a scalar `loss` with seed 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_scaled(loss, 1.0)
    }

    /// Reverse sweep seeding `d loss = seed`, e.g. `1 / batch_size`.
    pub fn backward_scaled(&self, loss: Var, seed: f64) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {shape:?}"),
            ));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(seed));
        let mut out = Gradients {
            inputs: vec![None; self.inputs.len()],
            params: Vec::new(),
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |grads: &mut Vec<Option<Matrix>>, parent: usize, delta: Matrix| {
                if !self.nodes[parent].needs_grad {
                    return;
                }
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |idx: usize| -> &Matrix { &self.nodes[idx].value };
            match &node.op {
                Op::Constant => {}
                Op::Input(k) => match &mut out.inputs[*k] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                },
                Op::Param(id) => out.params.push((*id, GradPiece::Dense(g))),
                Op::Gather { param, ids } => out.params.push((
                    *param,
                    GradPiece::Rows {
                        ids: ids.clone(),
                        grad: g,
                    },
                )),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(val(*b));
                    let gb = val(*a).t_matmul(&g);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, g.clone());
                    send(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    send(&mut grads, *b, g.map(|v| -v));
                    send(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(val(*b), |x, y| x * y);
                    let gb = g.zip_map(val(*a), |x, y| x * y);
                    send(&mut grads, *a, ga);
                    send(&mut grads, *b, gb);
                }
                Op::AddRow(x, bias) => {
                    send(&mut grads, *bias, reduce_sum(&g, Axis::Rows));
                    send(&mut grads, *x, g);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = val(p).cols();
                        send(&mut grads, p, g.columns(c0, w));
                        c0 += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut r0 = 0;
                    for &p in parts {
                        let h = val(p).rows();
                        let chunk = g.as_slice()[r0 * cols..(r0 + h) * cols].to_vec();
                        send(&mut grads, p, Matrix::from_vec(h, cols, chunk));
                        r0 += h;
                    }
                }
                Op::SliceRows(x, start) => {
                    let src = val(*x);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    let cols = src.cols();
                    gx.as_mut_slice()[start * cols..start * cols + g.len()]
                        .copy_from_slice(g.as_slice());
                    send(&mut grads, *x, gx);
                }
                Op::SliceCols(x, start) => {
                    let src = val(*x);
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        gx.row_mut(r)[*start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    send(&mut grads, *x, gx);
                }
                Op::Transpose(x) => send(&mut grads, *x, g.transpose()),
                Op::Tanh(x) => {
                    let gx = g.zip_map(&node.value, |d, y| d * (1.0 - y * y));
                    send(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(&node.value, |d, y| d * y * (1.0 - y));
                    send(&mut grads, *x, gx);
                }
                Op::Relu(x) => {
                    let gx = g.zip_map(val(*x), |d, v| if v > 0.0 { d } else { 0.0 });
                    send(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let gx = g.zip_map(&node.value, |d, y| d * y);
                    send(&mut grads, *x, gx);
                }
                Op::Log(x) => {
                    let gx = g.zip_map(val(*x), |d, v| d / v);
                    send(&mut grads, *x, gx);
                }
                Op::Scale(x, c) => send(&mut grads, *x, g.map(|d| d * c)),
                Op::ClampMin(x, floor) => {
                    let gx = g.zip_map(val(*x), |d, v| if v > *floor { d } else { 0.0 });
                    send(&mut grads, *x, gx);
                }
                Op::ScaleRows(x, factors) => {
                    let mut gx = g;
                    for (r, f) in factors.iter().enumerate() {
                        gx.row_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    send(&mut grads, *x, gx);
                }
                Op::MaskRows(x, keep) => {
                    let mut gx = g;
                    for (r, _) in keep.iter().enumerate().filter(|(_, k)| !**k) {
                        gx.row_mut(r).fill(0.0);
                    }
                    send(&mut grads, *x, gx);
                }
                Op::Softmax(x, axis) => {
                    let gx = match axis {
                        Axis::Cols => softmax_rows_backward(&node.value, &g),
                        Axis::Rows => {
                            softmax_rows_backward(&node.value.transpose(), &g.transpose())
                                .transpose()
                        }
                    };
                    send(&mut grads, *x, gx);
                }
                Op::Sum(x, axis) | Op::Mean(x, axis) => {
                    let src = val(*x);
                    let scale = match (&node.op, axis) {
                        (Op::Mean(..), Axis::Rows) => 1.0 / src.rows() as f64,
                        (Op::Mean(..), Axis::Cols) => 1.0 / src.cols() as f64,
                        _ => 1.0,
                    };
                    let mut gx = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..src.rows() {
                        for c in 0..src.cols() {
                            gx[(r, c)] = scale
                                * match axis {
                                    Axis::Rows => g[(0, c)],
                                    Axis::Cols => g[(r, 0)],
                                };
                        }
                    }
                    send(&mut grads, *x, gx);
                }
                Op::SumAll(x) => {
                    let src = val(*x);
                    send(&mut grads, *x, Matrix::filled(src.rows(), src.cols(), g[(0, 0)]));
                }
                Op::SumSquares(x) => {
                    let d = g[(0, 0)];
                    send(&mut grads, *x, val(*x).map(|v| 2.0 * v * d));
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let gm = val(*gamma);
                    let d = normalized.cols();
                    let mut g_gamma = Matrix::zeros(1, d);
                    let mut g_beta = Matrix::zeros(1, d);
                    let mut gx = Matrix::zeros(normalized.rows(), d);
                    for r in 0..normalized.rows() {
                        let xh = normalized.row(r);
                        let gr = g.row(r);
                        let mut ghat = vec![0.0; d];
                        for c in 0..d {
                            g_gamma[(0, c)] += gr[c] * xh[c];
                            g_beta[(0, c)] += gr[c];
                            ghat[c] = gr[c] * gm[(0, c)];
                        }
                        let mean_g = ghat.iter().sum::<f64>() / d as f64;
                        let mean_gx = dot(&ghat, xh) / d as f64;
                        for c in 0..d {
                            gx[(r, c)] = inv_std[r] * (ghat[c] - mean_g - xh[c] * mean_gx);
                        }
                    }
                    send(&mut grads, *x, gx);
                    send(&mut grads, *gamma, g_gamma);
                    send(&mut grads, *beta, g_beta);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Softmax within each row, max-shifted.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

fn softmax_rows_backward(y: &Matrix, g: &Matrix) -> Matrix {
    let mut gx = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), g.row(r));
        let inner = dot(yr, gr);
        for (c, o) in gx.row_mut(r).iter_mut().enumerate() {
            *o = yr[c] * (gr[c] - inner);
        }
    }
    gx
}

fn reduce_sum(m: &Matrix, axis: Axis) -> Matrix {
    match axis {
        Axis::Rows => {
            let mut out = Matrix::zeros(1, m.cols());
            for r in 0..m.rows() {
                for (o, v) in out.row_mut(0).iter_mut().zip(m.row(r)) {
                    *o += v;
                }
            }
            out
        }
        Axis::Cols => {
            let data = (0..m.rows()).map(|r| m.row(r).iter().sum()).collect();
            Matrix::from_vec(m.rows(), 1, data)
        }
    }
}

/// One contribution to a parameter's gradient.
#[derive(Debug, Clone)]
pub enum GradPiece {
    Dense(Matrix),
    /// Row `ids[k]` receives `grad.row(k)`; ids may repeat.
    Rows { ids: Vec<usize>, grad: Matrix },
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    inputs: Vec<Option<Matrix>>,
    params: Vec<(ParamId, GradPiece)>,
}

impl Gradients {
    /// Gradient w.r.t. the `k`-th [`Graph::input`] (by creation order),
    /// or `None` when the loss does not depend on it.
    pub fn input(&self, k: usize) -> Option<&Matrix> {
        self.inputs.get(k).and_then(Option::as_ref)
    }

    /// Dense gradient for one parameter, zeros when untouched.
    pub fn param_dense(&self, id: ParamId, shape: (usize, usize)) -> Matrix {
        let mut out = Matrix::zeros(shape.0, shape.1);
        self.add_param_into(id, &mut out, 1.0);
        out
    }

    fn add_param_into(&self, id: ParamId, dst: &mut Matrix, scale: f64) {
        for (pid, piece) in &self.params {
            if *pid != id {
                continue;
            }
            match piece {
                GradPiece::Dense(g) => dst.add_scaled(g, scale),
                GradPiece::Rows { ids, grad } => {
                    for (k, &row) in ids.iter().enumerate() {
                        for (d, s) in dst.row_mut(row).iter_mut().zip(grad.row(k)) {
                            *d += scale * s;
                        }
                    }
                }
            }
        }
    }

    /// Adds `scale ×` every parameter gradient into the store's
    /// accumulators. Calling it twice without [`ParameterStore::zero_grads`]
    /// accumulates twice.
    pub fn accumulate_into(&self, store: &mut ParameterStore, scale: f64) {
        for (id, piece) in &self.params {
            let grad = &mut store.get_mut(*id).tensor.grad;
            match piece {
                GradPiece::Dense(g) => grad.add_scaled(g, scale),
                GradPiece::Rows { ids, grad: g } => {
                    for (k, &row) in ids.iter().enumerate() {
                        for (d, s) in grad.row_mut(row).iter_mut().zip(g.row(k)) {
                            *d += scale * s;
                        }
                    }
                }
            }
        }
    }

    /// Folds `other` into `self` (used for deterministic batch reduction).
    pub fn extend(&mut self, other: Gradients) {
        self.params.extend(other.params);
    }
}
