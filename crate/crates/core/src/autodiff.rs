//! Minimal tape-based reverse-mode differentiation over dense matrices.
//!
//! Every value on the tape is a row-major `Array2<f64>`. Per-agent quantities
//! are laid out one agent per row. Parameters enter the tape through
//! [`Tape::param`] and their gradients are returned by [`Tape::backward`]
//! keyed by [`ParamId`].

use ndarray::{concatenate, s, Array2, Axis};
use thiserror::Error;

use crate::params::{ParamId, ParamStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("loss must be a 1x1 value, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("loss does not depend on any parameter")]
    Detached,
    #[error("non-finite value encountered during backward pass")]
    NonFinite,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Square(Var),
    /// Row-wise softmax restricted to `mask`; fully masked rows are zero.
    MaskedSoftmax(Var),
    LogSoftmax(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    Transpose(Var),
    Gather(Var, Vec<usize>),
    MeanRows(Var),
    BroadcastRows(Var),
    Sum(Var),
    RowMask(Var, Vec<bool>),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Gradients from one backward pass, indexed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads.get(id.index()).and_then(Option::as_ref)
    }

    /// Adds these gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (k, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                store.accumulate(ParamId::from_index(k), g);
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, op: Op, x: Var, value: Array2<f64>) -> Var {
        let ng = self.nodes[x.0].needs_grad;
        self.push(op, value, ng)
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, value: Array2<f64>) -> Var {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(op, value, ng)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone(), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.binary(Op::MatMul(a, b), a, b, v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.binary(Op::Add(a, b), a, b, v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.binary(Op::Sub(a, b), a, b, v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.binary(Op::Mul(a, b), a, b, v)
    }

    /// `a + row` with a `1 x c` row broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.binary(Op::AddRow(a, row), a, row, v)
    }

    /// `a * col` with an `r x 1` column broadcast over every column of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let v = self.value(a) * self.value(col);
        self.binary(Op::MulCol(a, col), a, col, v)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.unary(Op::Scale(a, k), a, v)
    }

    /// `a + k` elementwise.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        self.unary(Op::Offset(a), a, v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.unary(Op::Tanh(a), a, v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.unary(Op::Sigmoid(a), a, v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.unary(Op::Square(a), a, v)
    }

    /// Softmax of each row over the entries where `mask` is 1.
    pub fn masked_softmax(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), mask.dim(), "mask shape");
        let mut out = Array2::zeros(x.dim());
        for (r, (xr, mr)) in x.rows().into_iter().zip(mask.rows()).enumerate() {
            let max = xr
                .iter()
                .zip(mr.iter())
                .filter(|(_, &m)| m > 0.0)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for c in 0..xr.len() {
                if mr[c] > 0.0 {
                    let e = (xr[c] - max).exp();
                    out[[r, c]] = e;
                    z += e;
                }
            }
            out.row_mut(r).mapv_inplace(|e| e / z);
        }
        self.unary(Op::MaskedSoftmax(a), a, out)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.unary(Op::LogSoftmax(a), a, v)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = concatenate![Axis(1), *self.value(a), *self.value(b)];
        self.binary(Op::ConcatCols(a, b), a, b, v)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.unary(Op::SliceCols(a, start), a, v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.unary(Op::Transpose(a), a, v)
    }

    /// Picks column `idx[r]` from row `r`, giving an `r x 1` column.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), idx.len(), "one index per row");
        let v = Array2::from_shape_fn((idx.len(), 1), |(r, _)| x[[r, idx[r]]]);
        self.unary(Op::Gather(a, idx), a, v)
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = if x.nrows() == 0 {
            Array2::zeros((1, x.ncols()))
        } else {
            x.mean_axis(Axis(0))
                .expect("non-empty")
                .insert_axis(Axis(0))
        };
        self.unary(Op::MeanRows(a), a, v)
    }

    /// Repeats a `1 x c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let x = self.value(a);
        let v = x
            .broadcast((rows, x.ncols()))
            .expect("1 x c row")
            .to_owned();
        self.unary(Op::BroadcastRows(a), a, v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.unary(Op::Sum(a), a, v)
    }

    /// Zeroes the rows where `keep` is false.
    pub fn row_mask(&mut self, a: Var, keep: Vec<bool>) -> Var {
        let mut v = self.value(a).clone();
        for (r, &k) in keep.iter().enumerate() {
            if !k {
                v.row_mut(r).fill(0.0);
            }
        }
        self.unary(Op::RowMask(a, keep), a, v)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let (r, c) = self.value(loss).dim();
        if (r, c) != (1, 1) {
            return Err(GradError::NonScalarLoss(r, c));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(GradError::Detached);
        }
        if !self.value(loss)[[0, 0]].is_finite() {
            return Err(GradError::NonFinite);
        }
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Array2::ones((1, 1)));
        let mut out: Vec<Option<Array2<f64>>> = Vec::new();

        for k in (0..=loss.0).rev() {
            let Some(g) = adj[k].take() else { continue };
            let node = &self.nodes[k];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, d: Array2<f64>| {
                if self.nodes[v.0].needs_grad {
                    match &mut adj[v.0] {
                        Some(acc) => *acc += &d,
                        slot @ None => *slot = Some(d),
                    }
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    if g.iter().any(|x| !x.is_finite()) {
                        return Err(GradError::NonFinite);
                    }
                    let i = id.index();
                    if out.len() <= i {
                        out.resize(i + 1, None);
                    }
                    match &mut out[i] {
                        Some(acc) => *acc += &g,
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    send(*a, g.dot(&self.value(*b).t()));
                    send(*b, self.value(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, -g);
                }
                Op::Mul(a, b) => {
                    send(*a, &g * self.value(*b));
                    send(*b, &g * self.value(*a));
                }
                Op::AddRow(a, row) => {
                    send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*a, g);
                }
                Op::MulCol(a, col) => {
                    let dcol = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*a, &g * self.value(*col));
                    send(*col, dcol);
                }
                Op::Scale(a, k) => send(*a, g * *k),
                Op::Offset(a) => send(*a, g),
                Op::Tanh(a) => {
                    let y = &node.value;
                    send(*a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    send(*a, &g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Square(a) => send(*a, &g * &(self.value(*a) * 2.0)),
                Op::MaskedSoftmax(a) => {
                    // dx = y * (g - <g, y>_row)
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*a, y * &(&g - &dot));
                }
                Op::LogSoftmax(a) => {
                    let p = node.value.mapv(f64::exp);
                    let gs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    send(*a, &g - &(&p * &gs));
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    send(*a, g.slice(s![.., ..ca]).to_owned());
                    send(*b, g.slice(s![.., ca..]).to_owned());
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    send(*a, d);
                }
                Op::Transpose(a) => send(*a, g.t().to_owned()),
                Op::Gather(a, idx) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    for (r, &c) in idx.iter().enumerate() {
                        d[[r, c]] = g[[r, 0]];
                    }
                    send(*a, d);
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).nrows();
                    if rows > 0 {
                        let d =
                            g.broadcast((rows, g.ncols())).expect("row").to_owned() / rows as f64;
                        send(*a, d);
                    }
                }
                Op::BroadcastRows(a) => send(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    send(*a, d);
                }
                Op::RowMask(a, keep) => {
                    let mut d = g;
                    for (r, &k) in keep.iter().enumerate() {
                        if !k {
                            d.row_mut(r).fill(0.0);
                        }
                    }
                    send(*a, d);
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}
