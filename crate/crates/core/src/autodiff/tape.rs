use std::sync::Arc;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    PickCols(Var, Arc<[usize]>),
    SliceCols(Var, usize, usize),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run record of primitive operations.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(usize, Var)>,
}

/// Gradients of the leaf and parameter nodes, produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    if cols == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols();
    if cols == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFiniteValue(op_name(&op)));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant input. Constants receive gradients but they are
    /// never written anywhere.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var, AutodiffError> {
        self.push(value, Op::Leaf)
    }

    /// Records slot `slot` of `store` as a differentiable input.
    pub fn param(&mut self, store: &ParamStore, slot: usize) -> Result<Var, AutodiffError> {
        let v = self.push(store.value(slot).clone(), Op::Param)?;
        self.params.push((slot, v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", x, y));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.cols());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, x.data(), false, y.data(), false, out.data_mut(), 0.0);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("matmul_t", x, y));
        }
        let (m, k, n) = (x.rows(), x.cols(), y.rows());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, x.data(), false, y.data(), true, out.data_mut(), 0.0);
        self.push(out, Op::MatMulT(a, b))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, AutodiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "sub", |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a `[1, cols]` row to every row of `a` (bias).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add_row", x, r));
        }
        let mut out = x.clone();
        let cols = x.cols();
        if cols > 0 {
            for chunk in out.data_mut().chunks_mut(cols) {
                for (v, b) in chunk.iter_mut().zip(r.data()) {
                    *v += b;
                }
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies row `i` of `a` by element `i` of the `[rows, 1]` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AutodiffError> {
        let (x, c) = (self.value(a), self.value(col));
        if c.cols() != 1 || c.rows() != x.rows() {
            return Err(shape_err("mul_col", x, c));
        }
        let mut out = x.clone();
        let cols = x.cols();
        if cols > 0 {
            for (chunk, s) in out.data_mut().chunks_mut(cols).zip(c.data()) {
                for v in chunk.iter_mut() {
                    *v *= s;
                }
            }
        }
        self.push(out, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let rows = parts.first().map_or(0, |p| self.value(*p).rows());
        let mut total = 0;
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows {
                return Err(shape_err("concat", self.value(parts[0]), t));
            }
            total += t.cols();
        }
        let mut out = Tensor::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let t = self.value(*p);
            let w = t.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(t.row(r));
            }
            offset += w;
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let cols = x.cols();
        let mut out = Tensor::zeros(index.len(), cols);
        for (i, &src) in index.iter().enumerate() {
            if src >= x.rows() {
                return Err(AutodiffError::IndexOutOfRange {
                    index: src,
                    len: x.rows(),
                });
            }
            out.row_mut(i).copy_from_slice(x.row(src));
        }
        self.push(out, Op::GatherRows(a, index))
    }

    /// `out[index[i]] += a[i]` into a fresh `[n_rows, cols]` tensor.
    pub fn scatter_add_rows(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        n_rows: usize,
    ) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if index.len() != x.rows() {
            return Err(AutodiffError::LengthMismatch {
                expected: x.rows(),
                actual: index.len(),
            });
        }
        let cols = x.cols();
        let mut out = Tensor::zeros(n_rows, cols);
        for (i, &dst) in index.iter().enumerate() {
            if dst >= n_rows {
                return Err(AutodiffError::IndexOutOfRange {
                    index: dst,
                    len: n_rows,
                });
            }
            for (o, v) in out.row_mut(dst).iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAddRows(a, index))
    }

    /// Same as [`Tape::scatter_add_rows`], but each output entry adds its
    /// contributions in ascending order, so the result depends only on the
    /// multiset of rows routed to it and not on their order.
    pub fn scatter_sum_sorted(
        &mut self,
        a: Var,
        index: Arc<[usize]>,
        n_rows: usize,
    ) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if index.len() != x.rows() {
            return Err(AutodiffError::LengthMismatch {
                expected: x.rows(),
                actual: index.len(),
            });
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_rows];
        for (i, &dst) in index.iter().enumerate() {
            if dst >= n_rows {
                return Err(AutodiffError::IndexOutOfRange {
                    index: dst,
                    len: n_rows,
                });
            }
            members[dst].push(i);
        }
        let cols = x.cols();
        let mut out = Tensor::zeros(n_rows, cols);
        let mut column = Vec::new();
        for (dst, rows) in members.iter().enumerate() {
            for c in 0..cols {
                column.clear();
                column.extend(rows.iter().map(|&i| x.get(i, c)));
                column.sort_by(f64::total_cmp);
                out.set(dst, c, column.iter().sum());
            }
        }
        self.push(out, Op::ScatterAddRows(a, index))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let n = x.len().max(1) as f64;
        let out = Tensor::scalar(x.sum() / n);
        self.push(out, Op::Mean(a))
    }

    /// Row sums as a `[rows, 1]` column.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        let sums = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
        self.push(Tensor::column(sums), Op::SumCols(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    /// Softmax over the column axis of each row.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = log_softmax_rows(self.value(a));
        self.push(out, Op::LogSoftmax(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// `out[i] = a[i, cols[i]]` as a `[rows, 1]` column.
    pub fn pick_cols(&mut self, a: Var, cols: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if cols.len() != x.rows() {
            return Err(AutodiffError::LengthMismatch {
                expected: x.rows(),
                actual: cols.len(),
            });
        }
        let mut vals = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= x.cols() {
                return Err(AutodiffError::IndexOutOfRange {
                    index: c,
                    len: x.cols(),
                });
            }
            vals.push(x.get(r, c));
        }
        self.push(Tensor::column(vals), Op::PickCols(a, cols))
    }

    /// Columns `start..end` of every row.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let x = self.value(a);
        if start > end || end > x.cols() {
            return Err(AutodiffError::IndexOutOfRange {
                index: end,
                len: x.cols(),
            });
        }
        let w = end - start;
        let mut out = Tensor::zeros(x.rows(), w);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start, end))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push(out, Op::Reshape(a))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let root = self.value(loss);
        if root.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(root.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(root.shape().to_vec(), vec![1.0])?);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf | Op::Param) {
                grads[id] = Some(g);
                continue;
            }
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Param => unreachable!(),
                Op::MatMul(a, b) => {
                    let (x, w) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (x.rows(), x.cols(), w.cols());
                    let mut ga = Tensor::zeros(m, k);
                    gemm(m, n, k, g.data(), false, w.data(), true, ga.data_mut(), 0.0);
                    let mut gb = Tensor::zeros(k, n);
                    gemm(k, m, n, x.data(), true, g.data(), false, gb.data_mut(), 0.0);
                    accumulate(&mut grads, *a, ga.reshaped(x.shape().to_vec())?);
                    accumulate(&mut grads, *b, gb.reshaped(w.shape().to_vec())?);
                }
                Op::MatMulT(a, b) => {
                    let (x, w) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (x.rows(), x.cols(), w.rows());
                    let mut ga = Tensor::zeros(m, k);
                    gemm(m, n, k, g.data(), false, w.data(), false, ga.data_mut(), 0.0);
                    let mut gb = Tensor::zeros(n, k);
                    gemm(n, m, k, g.data(), true, x.data(), false, gb.data_mut(), 0.0);
                    accumulate(&mut grads, *a, ga.reshaped(x.shape().to_vec())?);
                    accumulate(&mut grads, *b, gb.reshaped(w.shape().to_vec())?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let cols = g.cols();
                    let mut gr = vec![0.0; cols];
                    if cols > 0 {
                        for chunk in g.data().chunks(cols) {
                            for (s, v) in gr.iter_mut().zip(chunk) {
                                *s += v;
                            }
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    accumulate(&mut grads, *row, Tensor::new(shape, gr)?);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (x, w) = (self.value(*a), self.value(*b));
                    let ga = zip(&g, w, |p, q| p * q);
                    let gb = zip(&g, x, |p, q| p * q);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MulCol(a, col) => {
                    let (x, c) = (self.value(*a), self.value(*col));
                    let cols = x.cols();
                    let mut ga = g.clone();
                    let mut gc = vec![0.0; c.rows()];
                    if cols > 0 {
                        for (r, chunk) in ga.data_mut().chunks_mut(cols).enumerate() {
                            let s = c.data()[r];
                            let xr = x.row(r);
                            let mut acc = 0.0;
                            for (gv, xv) in chunk.iter_mut().zip(xr) {
                                acc += *gv * xv;
                                *gv *= s;
                            }
                            gc[r] = acc;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *col, Tensor::new(c.shape().to_vec(), gc)?);
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    accumulate(&mut grads, *a, g.map(|v| v * f));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let t = self.value(*p);
                        let w = t.cols();
                        let mut gp = Tensor::zeros(t.rows(), w);
                        for r in 0..t.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        offset += w;
                        accumulate(&mut grads, *p, gp.reshaped(t.shape().to_vec())?);
                    }
                }
                Op::GatherRows(a, index) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for (i, &src) in index.iter().enumerate() {
                        for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *a, ga.reshaped(x.shape().to_vec())?);
                }
                Op::ScatterAddRows(a, index) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for (i, &dst) in index.iter().enumerate() {
                        ga.row_mut(i).copy_from_slice(g.row(dst));
                    }
                    accumulate(&mut grads, *a, ga.reshaped(x.shape().to_vec())?);
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    let s = g.item();
                    accumulate(&mut grads, *a, x.map(|_| s));
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let s = g.item() / x.len().max(1) as f64;
                    accumulate(&mut grads, *a, x.map(|_| s));
                }
                Op::SumCols(a) => {
                    let x = self.value(*a);
                    let cols = x.cols();
                    let mut ga = x.clone();
                    if cols > 0 {
                        for (r, chunk) in ga.data_mut().chunks_mut(cols).enumerate() {
                            let s = g.data()[r];
                            chunk.iter_mut().for_each(|v| *v = s);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, zip(&g, y, |gv, s| gv * s * (1.0 - s)));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, zip(&g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
                }
                Op::Exp(a) => {
                    accumulate(&mut grads, *a, zip(&g, y, |gv, e| gv * e));
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, zip(&g, x, |gv, xv| gv / xv));
                }
                Op::Softmax(a) => {
                    let cols = y.cols();
                    let mut ga = g.clone();
                    if cols > 0 {
                        for (r, chunk) in ga.data_mut().chunks_mut(cols).enumerate() {
                            let yr = y.row(r);
                            let dot: f64 = chunk.iter().zip(yr).map(|(p, q)| p * q).sum();
                            for (gv, yv) in chunk.iter_mut().zip(yr) {
                                *gv = yv * (*gv - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    let cols = y.cols();
                    let mut ga = g.clone();
                    if cols > 0 {
                        for (r, chunk) in ga.data_mut().chunks_mut(cols).enumerate() {
                            let total: f64 = chunk.iter().sum();
                            for (gv, lv) in chunk.iter_mut().zip(y.row(r)) {
                                *gv -= lv.exp() * total;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads, *a, zip(&g, x, |gv, xv| 2.0 * xv * gv));
                }
                Op::Clamp(a, lo, hi) => {
                    let x = self.value(*a);
                    let (lo, hi) = (*lo, *hi);
                    accumulate(
                        &mut grads,
                        *a,
                        zip(&g, x, |gv, xv| if xv >= lo && xv <= hi { gv } else { 0.0 }),
                    );
                }
                Op::PickCols(a, cols) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for (r, &c) in cols.iter().enumerate() {
                        ga.set(r, c, g.data()[r]);
                    }
                    accumulate(&mut grads, *a, ga.reshaped(x.shape().to_vec())?);
                }
                Op::SliceCols(a, start, end) => {
                    let x = self.value(*a);
                    let mut ga = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        ga.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga.reshaped(x.shape().to_vec())?);
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshaped(shape)?);
                }
            }
        }

        for g in grads.iter().flatten() {
            if !g.is_finite() {
                return Err(AutodiffError::NonFiniteGradient);
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    /// Gradient of `loss` with respect to every slot of `store`, flattened
    /// in slot order. Slots not on the tape get zeros.
    pub fn flat_param_grads(&self, loss: Var, store: &ParamStore) -> Result<Vec<f64>, AutodiffError> {
        let grads = self.backward(loss)?;
        let mut flat = vec![0.0; store.num_params()];
        for &(slot, var) in &self.params {
            if let Some(g) = grads.get(var) {
                for (o, v) in flat[store.slot_range(slot)].iter_mut().zip(g.data()) {
                    *o += v;
                }
            }
        }
        Ok(flat)
    }

    /// Runs [`Tape::backward`] and adds every parameter gradient into the
    /// matching gradient slot of `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<(), AutodiffError> {
        let grads = self.backward(loss)?;
        for &(slot, var) in &self.params {
            if let Some(g) = grads.get(var) {
                store.accumulate_grad(slot, g)?;
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(p, q)| f(*p, *q)).collect();
    Tensor::new(b.shape().to_vec(), data).expect("matching shapes")
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Param => "param",
        Op::MatMul(..) => "matmul",
        Op::MatMulT(..) => "matmul_t",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddRow(..) => "add_row",
        Op::Mul(..) => "mul",
        Op::MulCol(..) => "mul_col",
        Op::Scale(..) => "scale",
        Op::Concat(..) => "concat",
        Op::GatherRows(..) => "gather_rows",
        Op::ScatterAddRows(..) => "scatter_add_rows",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::SumCols(..) => "sum_cols",
        Op::Sigmoid(..) => "sigmoid",
        Op::Relu(..) => "relu",
        Op::Exp(..) => "exp",
        Op::Log(..) => "log",
        Op::Softmax(..) => "softmax",
        Op::LogSoftmax(..) => "log_softmax",
        Op::Square(..) => "square",
        Op::Clamp(..) => "clamp",
        Op::PickCols(..) => "pick_cols",
        Op::SliceCols(..) => "slice_cols",
        Op::Reshape(..) => "reshape",
    }
}
