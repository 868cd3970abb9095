//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! addressed by [`Var`] handles; parameters enter through
//! [`Graph::param`] and receive gradients in [`Graph::backward`].

use std::collections::HashMap;
use std::rc::Rc;

use crate::hypoexp::hypoexp_log_pdf;
use crate::params::{ParamId, ParamStore};
use crate::{NeuroError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Leaf,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    CumsumCols(Var),
    MeanAggregate(Var, Rc<Vec<Vec<usize>>>),
    /// Gradients are computed in the forward pass.
    HypoexpNll {
        rates: Var,
        z: Var,
        d_rates: Tensor,
        d_z: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    /// Gradient of a parameter, `None` if it did not influence the loss.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .get(&id)
            .and_then(|v| self.by_node[v.0].as_ref())
    }

    /// Gradient of any node created with [`Graph::leaf`] or [`Graph::param`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node[v.0].as_ref()
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

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Differentiable input that is not a parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The parameter's node; one node per parameter and graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let value = self.value(a).zip_map(self.value(b), f);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a (n×m) + row (1×m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a 1×m row");
        assert_eq!(av.cols(), rv.cols(), "add_row column mismatch");
        let mut out = av.clone();
        let m = av.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += rv.data()[i % m];
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Sum of all entries, 1×1.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    /// Mean of all entries, 1×1.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Row sums, n×1.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let sums = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let ng = self.ng(a);
        self.push(Tensor::column(sums), Op::RowSum(a), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(start < end && end <= t.cols(), "column slice out of range");
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::new(t.rows(), end - start, data);
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(t.row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Tensor::new(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
            ng,
        )
    }

    /// Running sum along each row.
    pub fn cumsum_cols(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let m = out.cols();
        for row in out.data_mut().chunks_mut(m) {
            for j in 1..m {
                row[j] += row[j - 1];
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::CumsumCols(a), ng)
    }

    /// Row `b·N + v` becomes the mean of rows `b·N + u`, `u ∈ neighbors[v]`,
    /// where `N = neighbors.len()`; rows of isolated nodes are zero. Any
    /// number of stacked `N`-row blocks is allowed.
    pub fn mean_aggregate(&mut self, a: Var, neighbors: Rc<Vec<Vec<usize>>>) -> Var {
        let t = self.value(a);
        let n = neighbors.len();
        assert!(
            n > 0 && t.rows() % n == 0,
            "rows must be a multiple of the node count"
        );
        let m = t.cols();
        let mut out = Tensor::zeros(t.rows(), m);
        for block in 0..t.rows() / n {
            for (v, nbrs) in neighbors.iter().enumerate() {
                if nbrs.is_empty() {
                    continue;
                }
                let w = 1.0 / nbrs.len() as f64;
                let dst = (block * n + v) * m;
                for &u in nbrs {
                    let src = t.row(block * n + u);
                    for (o, s) in out.data_mut()[dst..dst + m].iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::MeanAggregate(a, neighbors), ng)
    }

    /// Per-row `−log pdf(z)` of a hypoexponential with row rates (B×n) at
    /// `z` (B×1). Below `z_min` the loss continues linearly with slope
    /// `−n/z_min` in `z`, so infeasible rows still get finite gradients.
    pub fn hypoexp_nll(&mut self, rates: Var, z: Var, z_min: f64) -> Result<Var, NeuroError> {
        let (rv, zv) = (self.value(rates), self.value(z));
        if zv.cols() != 1 || zv.rows() != rv.rows() {
            return Err(NeuroError::Shape(format!(
                "hypoexp_nll: rates {:?} vs z {:?}",
                rv.shape(),
                zv.shape()
            )));
        }
        let n = rv.cols();
        let mut out = Vec::with_capacity(rv.rows());
        let mut d_rates = Vec::with_capacity(rv.len());
        let mut d_z = Vec::with_capacity(rv.rows());
        for r in 0..rv.rows() {
            let zr = zv.get(r, 0);
            let at = zr.max(z_min);
            let lp = hypoexp_log_pdf(rv.row(r), at)?;
            if zr >= z_min {
                out.push(-lp.value);
                d_z.push(-lp.d_y);
            } else {
                let slope = n as f64 / z_min;
                out.push(-lp.value + slope * (z_min - zr));
                d_z.push(-slope);
            }
            d_rates.extend(lp.d_rates.iter().map(|g| -g));
        }
        let value = Tensor::column(out);
        let op = Op::HypoexpNll {
            rates,
            z,
            d_rates: Tensor::new(rv.rows(), n, d_rates),
            d_z: Tensor::column(d_z),
        };
        let ng = self.ng(rates) || self.ng(z);
        Ok(self.push(value, op, ng))
    }

    /// Per-row Gaussian `−log N(y; μ, σ²)`, all arguments n×1.
    pub fn gaussian_nll(&mut self, mu: Var, sigma: Var, y: Var) -> Var {
        let diff = self.sub(y, mu);
        let z = self.div(diff, sigma);
        let z2 = self.square(z);
        let half = self.scale(z2, 0.5);
        let log_sigma = self.log(sigma);
        let s = self.add(half, log_sigma);
        self.add_scalar(s, 0.5 * (2.0 * std::f64::consts::PI).ln())
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NeuroError> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(NeuroError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            by_node: grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| self.value(v);
        match op {
            Op::Input | Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul_t(val(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, val(*a).t_matmul(g));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*row) {
                    let m = g.cols();
                    let mut acc = vec![0.0; m];
                    for r in 0..g.rows() {
                        for (s, v) in acc.iter_mut().zip(g.row(r)) {
                            *s += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::new(1, m, acc));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |x, y| x / y));
                }
                if self.ng(*b) {
                    let t = g.zip_map(out, |x, o| x * o);
                    self.accumulate(grads, *b, t.zip_map(bv, |x, y| -x / y));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| c * x)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => self.accumulate(grads, *a, g.zip_map(out, |x, s| x * s * (1.0 - s))),
            Op::Tanh(a) => self.accumulate(grads, *a, g.zip_map(out, |x, t| x * (1.0 - t * t))),
            Op::Relu(a) => self.accumulate(
                grads,
                *a,
                g.zip_map(val(*a), |x, i| if i > 0.0 { x } else { 0.0 }),
            ),
            Op::Softplus(a) => {
                self.accumulate(grads, *a, g.zip_map(val(*a), |x, i| x * sigmoid(i)))
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.zip_map(out, |x, e| x * e)),
            Op::Log(a) => self.accumulate(grads, *a, g.zip_map(val(*a), |x, i| x / i)),
            Op::Square(a) => self.accumulate(grads, *a, g.zip_map(val(*a), |x, i| 2.0 * x * i)),
            Op::Sum(a) => {
                let [r, c] = val(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let [r, c] = t.shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item() / t.len() as f64));
            }
            Op::RowSum(a) => {
                let [r, c] = val(*a).shape();
                let data = (0..r)
                    .flat_map(|i| std::iter::repeat_n(g.get(i, 0), c))
                    .collect();
                self.accumulate(grads, *a, Tensor::new(r, c, data));
            }
            Op::SliceCols(a, start) => {
                let [r, c] = val(*a).shape();
                let w = g.cols();
                let mut full = Tensor::zeros(r, c);
                for i in 0..r {
                    full.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, *a, full);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [r, c] = val(p).shape();
                    if self.ng(p) {
                        let mut data = Vec::with_capacity(r * c);
                        for i in 0..r {
                            data.extend_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, Tensor::new(r, c, data));
                    }
                    offset += c;
                }
            }
            Op::CumsumCols(a) => {
                // reverse running sum
                let mut t = g.clone();
                let m = t.cols();
                for row in t.data_mut().chunks_mut(m) {
                    for j in (0..m.saturating_sub(1)).rev() {
                        row[j] += row[j + 1];
                    }
                }
                self.accumulate(grads, *a, t);
            }
            Op::MeanAggregate(a, neighbors) => {
                let n = neighbors.len();
                let m = g.cols();
                let mut t = Tensor::zeros(g.rows(), m);
                for block in 0..g.rows() / n {
                    for (v, nbrs) in neighbors.iter().enumerate() {
                        if nbrs.is_empty() {
                            continue;
                        }
                        let w = 1.0 / nbrs.len() as f64;
                        let src: Vec<f64> = g.row(block * n + v).to_vec();
                        for &u in nbrs {
                            let dst = (block * n + u) * m;
                            for (o, s) in t.data_mut()[dst..dst + m].iter_mut().zip(&src) {
                                *o += w * s;
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, t);
            }
            Op::HypoexpNll {
                rates,
                z,
                d_rates,
                d_z,
            } => {
                if self.ng(*rates) {
                    let n = d_rates.cols();
                    let data = d_rates
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, d)| d * g.get(i / n, 0))
                        .collect();
                    self.accumulate(grads, *rates, Tensor::new(d_rates.rows(), n, data));
                }
                if self.ng(*z) {
                    self.accumulate(grads, *z, d_z.zip_map(g, |d, x| d * x));
                }
            }
        }
    }
}
