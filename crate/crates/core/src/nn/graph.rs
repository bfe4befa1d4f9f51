//! Define-by-run reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly,
//! stores its value and returns a [`Var`] handle. Nodes are created in
//! topological order, so backward is a single reverse sweep. A graph is
//! rebuilt for every batch and can be differentiated once.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::dirichlet::special::{digamma_raw, ln_gamma_raw, trigamma_raw};
use crate::error::{Error, Result};
use crate::nn::tensor::{gemm, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    index: usize,
    graph: u64,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    MulCol(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Exp(usize),
    Log(usize),
    Relu(usize),
    LeakyRelu(usize, f64),
    Tanh(usize),
    Square(usize),
    Softplus(usize),
    Lgamma(usize),
    Digamma(usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    RowLogSumExp(usize),
    RowLogSoftmax(usize),
    SliceCols(usize, usize, usize),
    SliceRows(usize, usize, usize),
    Gather(usize, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Tanh(..) => "tanh",
            Op::Square(..) => "square",
            Op::Softplus(..) => "softplus",
            Op::Lgamma(..) => "lgamma",
            Op::Digamma(..) => "digamma",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::RowLogSumExp(..) => "row_logsumexp",
            Op::RowLogSoftmax(..) => "row_log_softmax",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Gather(..) => "gather",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` when `v` was unreachable.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.grads.get_mut(v.index).and_then(Option::take)
    }
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
    non_finite: Option<&'static str>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
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

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn row_lse(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
            non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert_eq!(v.graph, self.id, "variable belongs to a different graph");
        v.index
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node { op, value, requires_grad });
        Var { index: self.nodes.len() - 1, graph: self.id }
    }

    /// Leaf whose gradient is tracked (parameters, differentiable inputs).
    pub fn param(&mut self, t: Tensor) -> Var {
        let t = t.as_matrix();
        self.push(Op::Leaf, t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = t.as_matrix();
        self.push(Op::Leaf, t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        if requires_grad {
            self.param(t)
        } else {
            self.constant(t)
        }
    }

    /// Copies the current value of `v` into a new constant leaf.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    /// Value of `v`, or an error naming the first operation that produced a
    /// non-finite number on this graph.
    pub fn checked_value(&self, v: Var) -> Result<&Tensor> {
        let t = self.value(v);
        if !t.is_finite() {
            return Err(Error::NonFinite(self.non_finite.unwrap_or("unknown").to_string()));
        }
        Ok(t)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.idx(v)].requires_grad
    }

    fn rg(&self, a: usize) -> bool {
        self.nodes[a].requires_grad
    }

    fn dims(&self, a: usize) -> (usize, usize) {
        self.nodes[a].value.dims2()
    }

    fn unary(&mut self, a: Var, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Var {
        let ai = self.idx(a);
        let (r, c) = self.dims(ai);
        let data = self.nodes[ai].value.data().iter().map(|&x| f(x)).collect();
        let rg = self.rg(ai);
        self.push(op(ai), Tensor::raw(r, c, data), rg)
    }

    fn binary_same(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let (da, db) = (self.dims(ai), self.dims(bi));
        assert_eq!(da, db, "{name}: shape {da:?} vs {db:?}");
        let data = self.nodes[ai]
            .value
            .data()
            .iter()
            .zip(self.nodes[bi].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(ai) || self.rg(bi);
        self.push(op(ai, bi), Tensor::raw(da.0, da.1, data), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let ((m, k), (k2, n)) = (self.dims(ai), self.dims(bi));
        assert_eq!(k, k2, "matmul: {m}x{k} by {k2}x{n}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.nodes[ai].value.data(), false, self.nodes[bi].value.data(), false, &mut out, 0.0);
        let rg = self.rg(ai) || self.rg(bi);
        self.push(Op::MatMul(ai, bi), Tensor::raw(m, n, out), rg)
    }

    /// `a + b` where `b` is a `1×M` row broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let ((r, c), (br, bc)) = (self.dims(ai), self.dims(bi));
        assert!(br == 1 && bc == c, "add_row: {r}x{c} with {br}x{bc}");
        let bv = self.nodes[bi].value.data();
        let data = self.nodes[ai]
            .value
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let rg = self.rg(ai) || self.rg(bi);
        self.push(Op::AddRow(ai, bi), Tensor::raw(r, c, data), rg)
    }

    /// `a ⊙ b` where `b` is a `1×M` row broadcast over the rows of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let ((r, c), (br, bc)) = (self.dims(ai), self.dims(bi));
        assert!(br == 1 && bc == c, "mul_row: {r}x{c} with {br}x{bc}");
        let bv = self.nodes[bi].value.data();
        let data = self.nodes[ai]
            .value
            .data()
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x * y))
            .collect();
        let rg = self.rg(ai) || self.rg(bi);
        self.push(Op::MulRow(ai, bi), Tensor::raw(r, c, data), rg)
    }

    /// `a ⊙ b` where `b` is an `N×1` column broadcast over the columns of `a`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (ai, bi) = (self.idx(a), self.idx(b));
        let ((r, c), (br, bc)) = (self.dims(ai), self.dims(bi));
        assert!(br == r && bc == 1, "mul_col: {r}x{c} with {br}x{bc}");
        let bv = self.nodes[bi].value.data();
        let data = self.nodes[ai]
            .value
            .data()
            .chunks(c.max(1))
            .zip(bv)
            .flat_map(|(row, s)| row.iter().map(move |x| x * s))
            .collect();
        let rg = self.rg(ai) || self.rg(bi);
        self.push(Op::MulCol(ai, bi), Tensor::raw(r, c, data), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ai = self.idx(a);
        let v = self.nodes[ai].value.scale(k);
        let rg = self.rg(ai);
        self.push(Op::Scale(ai, k), v, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + k` elementwise.
    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Offset, move |x| x + k)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log, f64::ln)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu, |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let ai = self.idx(a);
        let v = self.nodes[ai].value.map(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(ai);
        self.push(Op::LeakyRelu(ai, slope), v, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square, |x| x * x)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus, softplus)
    }

    /// `ln Γ(a)` elementwise; inputs must be positive.
    pub fn lgamma(&mut self, a: Var) -> Var {
        self.unary(a, Op::Lgamma, |x| if x > 0.0 { ln_gamma_raw(x) } else { f64::NAN })
    }

    /// `ψ(a)` elementwise; inputs must be positive.
    pub fn digamma(&mut self, a: Var) -> Var {
        self.unary(a, Op::Digamma, |x| if x > 0.0 { digamma_raw(x) } else { f64::NAN })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ai = self.idx(a);
        let s = self.nodes[ai].value.sum();
        let rg = self.rg(ai);
        self.push(Op::Sum(ai), Tensor::raw(1, 1, vec![s]), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ai = self.idx(a);
        let t = &self.nodes[ai].value;
        let m = t.sum() / t.len() as f64;
        let rg = self.rg(ai);
        self.push(Op::Mean(ai), Tensor::raw(1, 1, vec![m]), rg)
    }

    /// Sums each row: `N×M → N×1`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let ai = self.idx(a);
        let t = &self.nodes[ai].value;
        let data: Vec<f64> = t.iter_rows().map(|r| r.iter().sum()).collect();
        let n = data.len();
        let rg = self.rg(ai);
        self.push(Op::RowSum(ai), Tensor::raw(n, 1, data), rg)
    }

    /// Row-wise `log Σ exp`: `N×M → N×1`.
    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let ai = self.idx(a);
        let t = &self.nodes[ai].value;
        let data: Vec<f64> = t.iter_rows().map(row_lse).collect();
        let n = data.len();
        let rg = self.rg(ai);
        self.push(Op::RowLogSumExp(ai), Tensor::raw(n, 1, data), rg)
    }

    /// Row-wise log-softmax.
    pub fn row_log_softmax(&mut self, a: Var) -> Var {
        let ai = self.idx(a);
        let t = &self.nodes[ai].value;
        let (r, c) = t.dims2();
        let mut data = Vec::with_capacity(r * c);
        for row in t.iter_rows() {
            let l = row_lse(row);
            data.extend(row.iter().map(|x| x - l));
        }
        let rg = self.rg(ai);
        self.push(Op::RowLogSoftmax(ai), Tensor::raw(r, c, data), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let ai = self.idx(a);
        let (r, c) = self.dims(ai);
        assert!(start <= end && end <= c, "slice_cols {start}..{end} of {c}");
        let data = self.nodes[ai]
            .value
            .iter_rows()
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let rg = self.rg(ai);
        self.push(Op::SliceCols(ai, start, end), Tensor::raw(r, end - start, data), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let ai = self.idx(a);
        let (r, _) = self.dims(ai);
        assert!(start <= end && end <= r, "slice_rows {start}..{end} of {r}");
        let v = self.nodes[ai].value.slice_rows(start, end);
        let rg = self.rg(ai);
        self.push(Op::SliceRows(ai, start, end), v, rg)
    }

    /// Picks column `cols[i]` from row `i`: `N×M → N×1`.
    pub fn gather(&mut self, a: Var, cols: &[usize]) -> Var {
        let ai = self.idx(a);
        let (r, c) = self.dims(ai);
        assert_eq!(r, cols.len(), "gather: {r} rows, {} indices", cols.len());
        let t = &self.nodes[ai].value;
        let data = cols
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < c, "gather: column {j} out of {c}");
                t.get(i, j)
            })
            .collect();
        let rg = self.rg(ai);
        self.push(Op::Gather(ai, cols.to_vec()), Tensor::raw(r, 1, data), rg)
    }

    /// Reverse sweep from the scalar `loss`. Consumes the graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if loss.graph != self.id {
            return Err(Error::Graph("loss belongs to a different graph".into()));
        }
        if self.consumed {
            return Err(Error::Graph("backward already run on this graph".into()));
        }
        let li = loss.index;
        if self.nodes[li].value.len() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        if !self.nodes[li].requires_grad {
            return Err(Error::Graph("loss is detached from every tracked leaf".into()));
        }
        if let Some(op) = self.non_finite {
            return Err(Error::NonFinite(op.to_string()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[li] = Some(Tensor::raw(1, 1, vec![1.0]));
        for i in (0..=li).rev() {
            let Some(gi) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &gi, &mut grads);
            grads[i] = Some(gi);
        }
        if grads.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("backward".into()));
        }
        Ok(Gradients { graph: self.id, grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: usize, g: Tensor) {
        if !self.nodes[target].requires_grad {
            return;
        }
        match &mut grads[target] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn elementwise(&self, a: usize, g: &Tensor, f: impl Fn(f64, f64, f64) -> f64, out: usize) -> Tensor {
        // f(upstream, input, output)
        let x = &self.nodes[a].value;
        let y = &self.nodes[out].value;
        let (r, c) = x.dims2();
        let data = g
            .data()
            .iter()
            .zip(x.data())
            .zip(y.data())
            .map(|((&gg, &xx), &yy)| f(gg, xx, yy))
            .collect();
        Tensor::raw(r, c, data)
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims(a), self.dims(b));
                if self.rg(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, self.nodes[b].value.data(), true, &mut da, 0.0);
                    self.accumulate(grads, a, Tensor::raw(m, k, da));
                }
                if self.rg(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, self.nodes[a].value.data(), true, g.data(), false, &mut db, 0.0);
                    self.accumulate(grads, b, Tensor::raw(k, n, db));
                }
            }
            Op::AddRow(a, b) => {
                if self.rg(a) {
                    self.accumulate(grads, a, g.clone());
                }
                if self.rg(b) {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for row in g.iter_rows() {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    self.accumulate(grads, b, Tensor::raw(1, c, db));
                }
            }
            Op::MulRow(a, b) => {
                let (r, c) = self.dims(a);
                let av = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                if self.rg(a) {
                    let da = g
                        .data()
                        .chunks(c.max(1))
                        .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x * y))
                        .collect();
                    self.accumulate(grads, a, Tensor::raw(r, c, da));
                }
                if self.rg(b) {
                    let mut db = vec![0.0; c];
                    for (grow, arow) in g.data().chunks(c.max(1)).zip(av.chunks(c.max(1))) {
                        for j in 0..c {
                            db[j] += grow[j] * arow[j];
                        }
                    }
                    self.accumulate(grads, b, Tensor::raw(1, c, db));
                }
            }
            Op::MulCol(a, b) => {
                let (r, c) = self.dims(a);
                let av = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                if self.rg(a) {
                    let da = g
                        .data()
                        .chunks(c.max(1))
                        .zip(bv)
                        .flat_map(|(row, s)| row.iter().map(move |x| x * s))
                        .collect();
                    self.accumulate(grads, a, Tensor::raw(r, c, da));
                }
                if self.rg(b) {
                    let db = g
                        .data()
                        .chunks(c.max(1))
                        .zip(av.chunks(c.max(1)))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(grads, b, Tensor::raw(r, 1, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                if self.rg(b) {
                    self.accumulate(grads, b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(a) {
                    let da = g.data().iter().zip(self.nodes[b].value.data()).map(|(x, y)| x * y).collect();
                    let (r, c) = g.dims2();
                    self.accumulate(grads, a, Tensor::raw(r, c, da));
                }
                if self.rg(b) {
                    let db = g.data().iter().zip(self.nodes[a].value.data()).map(|(x, y)| x * y).collect();
                    let (r, c) = g.dims2();
                    self.accumulate(grads, b, Tensor::raw(r, c, db));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, a, g.scale(k)),
            Op::Offset(a) => self.accumulate(grads, a, g.clone()),
            Op::Exp(a) => {
                let d = self.elementwise(a, g, |gg, _, y| gg * y, i);
                self.accumulate(grads, a, d);
            }
            Op::Log(a) => {
                let d = self.elementwise(a, g, |gg, x, _| gg / x, i);
                self.accumulate(grads, a, d);
            }
            Op::Relu(a) => {
                let d = self.elementwise(a, g, |gg, x, _| if x > 0.0 { gg } else { 0.0 }, i);
                self.accumulate(grads, a, d);
            }
            Op::LeakyRelu(a, s) => {
                let d = self.elementwise(a, g, |gg, x, _| if x > 0.0 { gg } else { s * gg }, i);
                self.accumulate(grads, a, d);
            }
            Op::Tanh(a) => {
                let d = self.elementwise(a, g, |gg, _, y| gg * (1.0 - y * y), i);
                self.accumulate(grads, a, d);
            }
            Op::Square(a) => {
                let d = self.elementwise(a, g, |gg, x, _| 2.0 * x * gg, i);
                self.accumulate(grads, a, d);
            }
            Op::Softplus(a) => {
                let d = self.elementwise(a, g, |gg, x, _| gg * sigmoid(x), i);
                self.accumulate(grads, a, d);
            }
            Op::Lgamma(a) => {
                let d = self.elementwise(a, g, |gg, x, _| gg * digamma_raw(x), i);
                self.accumulate(grads, a, d);
            }
            Op::Digamma(a) => {
                let d = self.elementwise(a, g, |gg, x, _| gg * trigamma_raw(x), i);
                self.accumulate(grads, a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.dims(a);
                self.accumulate(grads, a, Tensor::full(r, c, g.data()[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.dims(a);
                let n = (r * c) as f64;
                self.accumulate(grads, a, Tensor::full(r, c, g.data()[0] / n));
            }
            Op::RowSum(a) => {
                let (r, c) = self.dims(a);
                let d = g.data().iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
                self.accumulate(grads, a, Tensor::raw(r, c, d));
            }
            Op::RowLogSumExp(a) => {
                let x = &self.nodes[a].value;
                let (r, c) = x.dims2();
                let lse = node.value.data();
                let mut d = Vec::with_capacity(r * c);
                for ((row, &l), &gg) in x.iter_rows().zip(lse).zip(g.data()) {
                    d.extend(row.iter().map(|v| gg * (v - l).exp()));
                }
                self.accumulate(grads, a, Tensor::raw(r, c, d));
            }
            Op::RowLogSoftmax(a) => {
                let y = &node.value;
                let (r, c) = y.dims2();
                let mut d = Vec::with_capacity(r * c);
                for (yrow, grow) in y.iter_rows().zip(g.iter_rows()) {
                    let gs: f64 = grow.iter().sum();
                    d.extend(yrow.iter().zip(grow).map(|(yy, gg)| gg - yy.exp() * gs));
                }
                self.accumulate(grads, a, Tensor::raw(r, c, d));
            }
            Op::SliceCols(a, s, e) => {
                let (r, c) = self.dims(a);
                let mut d = vec![0.0; r * c];
                for (k, row) in g.iter_rows().enumerate() {
                    d[k * c + s..k * c + e].copy_from_slice(row);
                }
                self.accumulate(grads, a, Tensor::raw(r, c, d));
            }
            Op::SliceRows(a, s, e) => {
                let (r, c) = self.dims(a);
                let mut d = vec![0.0; r * c];
                d[s * c..e * c].copy_from_slice(g.data());
                self.accumulate(grads, a, Tensor::raw(r, c, d));
            }
            Op::Gather(a, ref cols) => {
                let (r, c) = self.dims(a);
                let mut d = vec![0.0; r * c];
                for (k, (&j, &gg)) in cols.iter().zip(g.data()).enumerate() {
                    d[k * c + j] = gg;
                }
                self.accumulate(grads, a, Tensor::raw(r, c, d));
            }
        }
    }
}

/// Registers `params` as graph leaves, in order.
pub fn bind(g: &mut Graph, params: &[&Tensor], requires_grad: bool) -> Vec<Var> {
    params.iter().map(|p| g.leaf((*p).clone(), requires_grad)).collect()
}
