//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! accumulates gradients for every node that depends on a trainable leaf.

use super::matrix::{gemm, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const NO_SOURCE: u32 = u32::MAX;

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Softplus(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    NeighborMax { src: Var, source: Vec<u32> },
    SegmentReduce { src: Var, offsets: Vec<usize>, mean: bool },
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    LogSumExp { src: Var, shifted: Vec<f64> },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Neighbor lists in compressed-row form, one list per target row.
#[derive(Clone, Debug, Default)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl Csr {
    pub fn from_lists<I, J>(lists: I) -> Self
    where
        I: IntoIterator<Item = J>,
        J: IntoIterator<Item = usize>,
    {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        for list in lists {
            indices.extend(list.into_iter().map(|u| u as u32));
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, row: usize) -> &[u32] {
        &self.indices[self.offsets[row]..self.offsets[row + 1]]
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros if `v` did not
    /// influence the loss.
    pub fn get(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "not a scalar node");
        m.data()[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), needs)
    }

    /// `a + bias` with a `1×c` bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.rows(), 1, "bias must be a row vector");
        assert_eq!(av.cols(), bv.cols(), "bias width mismatch");
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        self.push(value, Op::AddRow(a, bias), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), needs)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), f64::min);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Min(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x * k);
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, k), needs)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|x| x + k);
        let needs = self.needs(a);
        self.push(value, Op::Offset(a), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let needs = self.needs(a);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let needs = self.needs(a);
        self.push(value, Op::Exp(a), needs)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let needs = self.needs(a);
        self.push(value, Op::Softplus(a), needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let needs = self.needs(a);
        self.push(value, Op::Abs(a), needs)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let needs = self.needs(a);
        self.push(value, Op::Clamp(a, lo, hi), needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows(), rows, "concat row mismatch");
                value.row_mut(r)[c0..c0 + pv.cols()].copy_from_slice(pv.row(r));
                c0 += pv.cols();
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), needs)
    }

    /// Columns `[start, start + len)`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "column slice out of range");
        let mut value = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            value
                .row_mut(r)
                .copy_from_slice(&av.row(r)[start..start + len]);
        }
        let needs = self.needs(a);
        self.push(value, Op::SliceCols(a, start), needs)
    }

    /// Row `v` of the output is the elementwise maximum of the rows of `src`
    /// listed in `adjacency.neighbors(v)`, or zero for an empty list.
    pub fn neighbor_max(&mut self, src: Var, adjacency: &Csr) -> Var {
        let sv = self.value(src);
        let (n, d) = (adjacency.rows(), sv.cols());
        let mut value = Matrix::zeros(n, d);
        let mut source = vec![NO_SOURCE; n * d];
        for v in 0..n {
            let nbrs = adjacency.neighbors(v);
            if nbrs.is_empty() {
                continue;
            }
            let out = &mut value.data_mut()[v * d..(v + 1) * d];
            let arg = &mut source[v * d..(v + 1) * d];
            out.copy_from_slice(sv.row(nbrs[0] as usize));
            arg.fill(nbrs[0]);
            for &u in &nbrs[1..] {
                for ((o, a), &x) in out.iter_mut().zip(arg.iter_mut()).zip(sv.row(u as usize)) {
                    if x > *o {
                        *o = x;
                        *a = u;
                    }
                }
            }
        }
        let needs = self.needs(src);
        self.push(value, Op::NeighborMax { src, source }, needs)
    }

    /// Row `i` of the output reduces rows `offsets[i]..offsets[i + 1]` of
    /// `src` by sum, or by mean when `mean` is set.
    pub fn segment_reduce(&mut self, src: Var, offsets: &[usize], mean: bool) -> Var {
        let sv = self.value(src);
        let segs = offsets.len() - 1;
        let mut value = Matrix::zeros(segs, sv.cols());
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            assert!(hi > lo, "empty segment");
            let out = value.row_mut(s);
            for r in lo..hi {
                for (o, x) in out.iter_mut().zip(sv.row(r)) {
                    *o += x;
                }
            }
            if mean {
                let inv = 1.0 / (hi - lo) as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
        }
        let needs = self.needs(src);
        self.push(
            value,
            Op::SegmentReduce {
                src,
                offsets: offsets.to_vec(),
                mean,
            },
            needs,
        )
    }

    /// Per-row sum, producing a column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Matrix::from_vec(
            av.rows(),
            1,
            (0..av.rows()).map(|r| av.row(r).iter().sum()).collect(),
        );
        let needs = self.needs(a);
        self.push(value, Op::RowSum(a), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).sum()]);
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Matrix::from_vec(1, 1, vec![av.sum() / av.len() as f64]);
        let needs = self.needs(a);
        self.push(value, Op::Mean(a), needs)
    }

    /// `ln Σ_i exp(a_i + c_i)` over all entries of `a`, with constant
    /// per-entry offsets `c`. Stable for large magnitudes.
    pub fn log_sum_exp(&mut self, a: Var, offsets: &[f64]) -> Var {
        let av = self.value(a);
        assert_eq!(av.len(), offsets.len(), "offset count mismatch");
        let shifted: Vec<f64> = av.data().iter().zip(offsets).map(|(x, c)| x + c).collect();
        let max = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = if max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            max + shifted.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
        };
        let needs = self.needs(a);
        self.push(
            Matrix::from_vec(1, 1, vec![lse]),
            Op::LogSumExp { src: a, shifted },
            needs,
        )
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_scaled(&delta, 1.0),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_ref(&self, grads: &mut [Option<Matrix>], v: Var, delta: &Matrix) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_scaled(delta, 1.0),
            slot @ None => *slot = Some(delta.clone()),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut da, 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut db, 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*bias) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *bias, db);
                }
                self.accumulate_ref(grads, *a, g);
            }
            Op::Add(a, b) => {
                self.accumulate_ref(grads, *a, g);
                self.accumulate_ref(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate_ref(grads, *a, g);
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |x, y| x * y));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(av, |x, y| x * y));
                }
            }
            Op::Min(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut db = g.clone();
                for i in 0..g.len() {
                    if av.data()[i] <= bv.data()[i] {
                        db.data_mut()[i] = 0.0;
                    } else {
                        da.data_mut()[i] = 0.0;
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|x| x * k)),
            Op::Offset(a) => self.accumulate_ref(grads, *a, g),
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(out, |x, t| x * (1.0 - t * t));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.zip_map(out, |x, e| x * e);
                self.accumulate(grads, *a, d);
            }
            Op::Softplus(a) => {
                let d = g.zip_map(self.value(*a), |x, y| x * sigmoid(y));
                self.accumulate(grads, *a, d);
            }
            Op::Abs(a) => {
                let d = g.zip_map(self.value(*a), |x, y| x * sign(y));
                self.accumulate(grads, *a, d);
            }
            Op::Clamp(a, lo, hi) => {
                let d = g.zip_map(self.value(*a), |x, y| {
                    if y < *lo || y > *hi {
                        0.0
                    } else {
                        x
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.needs(p) {
                        let mut d = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    c0 += w;
                }
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, d);
            }
            Op::NeighborMax { src, source } => {
                let sv = self.value(*src);
                let d_cols = sv.cols();
                let mut d = Matrix::zeros(sv.rows(), d_cols);
                for (i, &u) in source.iter().enumerate() {
                    if u != NO_SOURCE {
                        let k = i % d_cols;
                        let cell = u as usize * d_cols + k;
                        d.data_mut()[cell] += g.data()[i];
                    }
                }
                self.accumulate(grads, *src, d);
            }
            Op::SegmentReduce { src, offsets, mean } => {
                let sv = self.value(*src);
                let mut d = Matrix::zeros(sv.rows(), sv.cols());
                for s in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[s], offsets[s + 1]);
                    let k = if *mean { 1.0 / (hi - lo) as f64 } else { 1.0 };
                    for r in lo..hi {
                        for (o, x) in d.row_mut(r).iter_mut().zip(g.row(s)) {
                            *o = x * k;
                        }
                    }
                }
                self.accumulate(grads, *src, d);
            }
            Op::RowSum(a) => {
                let av = self.value(*a);
                let mut d = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let gr = g.data()[r];
                    d.row_mut(r).fill(gr);
                }
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, Matrix::filled(av.rows(), av.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let k = g.data()[0] / av.len() as f64;
                self.accumulate(grads, *a, Matrix::filled(av.rows(), av.cols(), k));
            }
            Op::LogSumExp { src, shifted } => {
                let av = self.value(*src);
                let lse = out.data()[0];
                let gs = g.data()[0];
                let d: Vec<f64> = shifted.iter().map(|x| gs * (x - lse).exp()).collect();
                self.accumulate(grads, *src, Matrix::from_vec(av.rows(), av.cols(), d));
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
