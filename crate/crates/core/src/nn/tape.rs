//! Reverse-mode differentiation over a linear tape.
//!
//! Model code is written once against [`Exec`]. [`Eval`] runs it eagerly
//! without retaining intermediates (inference on large graphs); [`Tape`]
//! records every operation so that [`Tape::backward`] can accumulate exact
//! gradients into a [`ParamStore`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::nn::ops::{self, sigmoid_scalar};
use crate::nn::tensor::gemm;
use crate::nn::{ParamId, ParamStore, Tensor2};

pub trait Exec {
    type Var: Clone;

    fn constant(&mut self, value: Tensor2) -> Self::Var;
    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::Var;
    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a Tensor2;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn add_broadcast_row(&mut self, a: &Self::Var, row: &Self::Var) -> Result<Self::Var>;
    fn add_scalar(&mut self, a: &Self::Var, c: f64) -> Self::Var;
    fn scale(&mut self, a: &Self::Var, c: f64) -> Self::Var;
    fn relu(&mut self, a: &Self::Var) -> Self::Var;
    fn tanh(&mut self, a: &Self::Var) -> Self::Var;
    fn sigmoid(&mut self, a: &Self::Var) -> Self::Var;
    fn exp(&mut self, a: &Self::Var) -> Self::Var;
    fn log(&mut self, a: &Self::Var) -> Self::Var;
    fn clamp(&mut self, a: &Self::Var, lo: f64, hi: f64) -> Self::Var;
    fn rowwise_softmax(&mut self, a: &Self::Var) -> Self::Var;
    fn transpose(&mut self, a: &Self::Var) -> Self::Var;
    fn concat_cols(&mut self, parts: &[Self::Var]) -> Result<Self::Var>;
    /// Sum of all entries as a `1 x 1` tensor.
    fn sum(&mut self, a: &Self::Var) -> Self::Var;
    fn mean(&mut self, a: &Self::Var) -> Self::Var;
    fn neighbor_softmax_aggregate(
        &mut self,
        messages: &Self::Var,
        adj: &Arc<Adjacency>,
        beta: f64,
    ) -> Result<Self::Var>;
    /// Discrete-time survival negative log-likelihood from `1 x n` logits.
    fn survival_nll(&mut self, logits: &Self::Var, bin: usize, censored: bool) -> Result<Self::Var>;
}

fn checked(value: Tensor2) -> Tensor2 {
    debug_assert!(value.is_finite(), "non-finite activation {value:?}");
    value
}

/// Eager evaluation. Nothing is recorded.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Exec for Eval {
    type Var = Tensor2;

    fn constant(&mut self, value: Tensor2) -> Tensor2 {
        value
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Tensor2 {
        store.value(id).clone()
    }

    fn value<'a>(&'a self, var: &'a Tensor2) -> &'a Tensor2 {
        var
    }

    fn matmul(&mut self, a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
        crate::nn::matmul(a, b).map(checked)
    }

    fn add(&mut self, a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
        ops::add(a, b).map(checked)
    }

    fn mul(&mut self, a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
        ops::mul(a, b).map(checked)
    }

    fn add_broadcast_row(&mut self, a: &Tensor2, row: &Tensor2) -> Result<Tensor2> {
        ops::add_broadcast_row(a, row).map(checked)
    }

    fn add_scalar(&mut self, a: &Tensor2, c: f64) -> Tensor2 {
        checked(a.map(|v| v + c))
    }

    fn scale(&mut self, a: &Tensor2, c: f64) -> Tensor2 {
        checked(a.map(|v| v * c))
    }

    fn relu(&mut self, a: &Tensor2) -> Tensor2 {
        ops::relu(a)
    }

    fn tanh(&mut self, a: &Tensor2) -> Tensor2 {
        a.map(f64::tanh)
    }

    fn sigmoid(&mut self, a: &Tensor2) -> Tensor2 {
        ops::sigmoid(a)
    }

    fn exp(&mut self, a: &Tensor2) -> Tensor2 {
        checked(a.map(f64::exp))
    }

    fn log(&mut self, a: &Tensor2) -> Tensor2 {
        checked(a.map(f64::ln))
    }

    fn clamp(&mut self, a: &Tensor2, lo: f64, hi: f64) -> Tensor2 {
        a.map(|v| v.clamp(lo, hi))
    }

    fn rowwise_softmax(&mut self, a: &Tensor2) -> Tensor2 {
        checked(ops::rowwise_softmax(a))
    }

    fn transpose(&mut self, a: &Tensor2) -> Tensor2 {
        a.transpose()
    }

    fn concat_cols(&mut self, parts: &[Tensor2]) -> Result<Tensor2> {
        ops::concat_cols(&parts.iter().collect::<Vec<_>>())
    }

    fn sum(&mut self, a: &Tensor2) -> Tensor2 {
        Tensor2::scalar(a.sum())
    }

    fn mean(&mut self, a: &Tensor2) -> Tensor2 {
        Tensor2::scalar(a.sum() / a.len() as f64)
    }

    fn neighbor_softmax_aggregate(
        &mut self,
        messages: &Tensor2,
        adj: &Arc<Adjacency>,
        beta: f64,
    ) -> Result<Tensor2> {
        ops::neighbor_softmax_aggregate(messages, adj, beta).map(checked)
    }

    fn survival_nll(&mut self, logits: &Tensor2, bin: usize, censored: bool) -> Result<Tensor2> {
        ops::survival_nll_logits(logits, bin, censored).map(|(loss, _)| Tensor2::scalar(loss))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Clamp(Var, f64, f64),
    RowSoftmax(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Aggregate(Var, Arc<Adjacency>, f64),
    SurvivalNll(Var, Tensor2),
}

struct Node {
    op: Op,
    value: Tensor2,
}

/// Records operations for one forward pass.
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

    fn push(&mut self, op: Op, value: Tensor2) -> Var {
        let value = checked(value);
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Signs of every ReLU input and whether each clamp input lies inside
    /// its range. Two evaluations with equal patterns lie on the same
    /// smooth piece of the function.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::Relu(a) => pattern.extend(self.val(a).data().iter().map(|&v| v > 0.0)),
                Op::Clamp(a, lo, hi) => {
                    pattern.extend(self.val(a).data().iter().map(|&v| v > lo && v < hi))
                }
                Op::SurvivalNll(a, _) => pattern.extend(
                    self.val(a)
                        .data()
                        .iter()
                        .map(|&v| v.abs() < ops::LOGIT_CLAMP),
                ),
                _ => {}
            }
        }
        pattern
    }

    /// Gradient of the scalar `output` with respect to every recorded value.
    /// Entries are `None` for values the output does not depend on.
    pub fn gradients(&self, output: Var) -> Result<Vec<Option<Tensor2>>> {
        if self.val(output).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                left: self.val(output).shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Tensor2>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(Tensor2::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    /// Backpropagates from the scalar `output` and adds parameter gradients
    /// into `store`. Returns the output value.
    pub fn backward(&self, output: Var, store: &mut ParamStore) -> Result<f64> {
        let grads = self.gradients(output)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                store.grad_mut(*id).add_assign(&g);
            }
        }
        Ok(self.val(output).item())
    }

    fn backward_node(&self, i: usize, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, delta: Tensor2| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let mut ga = Tensor2::zeros(av.rows(), av.cols());
                gemm(1.0, g, false, bv, true, 0.0, &mut ga);
                let mut gb = Tensor2::zeros(bv.rows(), bv.cols());
                gemm(1.0, av, true, g, false, 0.0, &mut gb);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                acc(*a, ops::zip_map(g, self.val(*b), |x, y| x * y));
                acc(*b, ops::zip_map(g, self.val(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                let mut col_sums = Tensor2::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (s, v) in col_sums.data_mut().iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                acc(*a, g.clone());
                acc(*row, col_sums);
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Scale(a, c) => acc(*a, g.map(|v| v * c)),
            Op::Relu(a) => acc(
                *a,
                ops::zip_map(g, self.val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
            ),
            Op::Tanh(a) => acc(*a, ops::zip_map(g, y, |gv, t| gv * (1.0 - t * t))),
            Op::Sigmoid(a) => acc(*a, ops::zip_map(g, y, |gv, s| gv * s * (1.0 - s))),
            Op::Exp(a) => acc(*a, ops::zip_map(g, y, |gv, e| gv * e)),
            Op::Log(a) => acc(*a, ops::zip_map(g, self.val(*a), |gv, x| gv / x)),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                ops::zip_map(g, self.val(*a), |gv, x| {
                    if x >= *lo && x <= *hi {
                        gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::RowSoftmax(a) => {
                let mut ga = Tensor2::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, p), q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = p * (q - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let cols = self.val(*p).cols();
                    let mut gp = Tensor2::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    acc(*p, gp);
                }
            }
            Op::Sum(a) => {
                let av = self.val(*a);
                acc(*a, Tensor2::filled(av.rows(), av.cols(), g.item()));
            }
            Op::Mean(a) => {
                let av = self.val(*a);
                acc(
                    *a,
                    Tensor2::filled(av.rows(), av.cols(), g.item() / av.len() as f64),
                );
            }
            Op::Aggregate(a, adj, beta) => {
                acc(*a, aggregate_backward(self.val(*a), y, g, adj, *beta));
            }
            Op::SurvivalNll(a, dlogits) => acc(*a, dlogits.map(|v| v * g.item())),
        }
    }
}

/// For `out = sum_u a_u m_u` with `a = softmax(beta m)`, the partial
/// derivative with respect to `m_u` is `a_u (1 + beta (m_u - out))`.
fn aggregate_backward(
    messages: &Tensor2,
    out: &Tensor2,
    g: &Tensor2,
    adj: &Adjacency,
    beta: f64,
) -> Tensor2 {
    let d = messages.cols();
    let mut grad = Tensor2::zeros(messages.rows(), d);
    let mut max = vec![0.0; d];
    let mut den = vec![0.0; d];
    for v in 0..messages.rows() {
        max.fill(f64::NEG_INFINITY);
        for u in ops::sources(adj, v) {
            for (m, &x) in max.iter_mut().zip(messages.row(u)) {
                *m = m.max(beta * x);
            }
        }
        den.fill(0.0);
        for u in ops::sources(adj, v) {
            for (c, &x) in messages.row(u).iter().enumerate() {
                den[c] += (beta * x - max[c]).exp();
            }
        }
        let (gv, ov) = (g.row(v), out.row(v));
        for u in ops::sources(adj, v) {
            let base = u * d;
            for c in 0..d {
                let x = messages.data()[base + c];
                let a = (beta * x - max[c]).exp() / den[c];
                grad.data_mut()[base + c] += gv[c] * a * (1.0 + beta * (x - ov[c]));
            }
        }
    }
    grad
}

impl Exec for Tape {
    type Var = Var;

    fn constant(&mut self, value: Tensor2) -> Var {
        self.push(Op::Leaf, value)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone())
    }

    fn value<'a>(&'a self, var: &'a Var) -> &'a Tensor2 {
        self.val(*var)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = crate::nn::matmul(self.val(*a), self.val(*b))?;
        Ok(self.push(Op::MatMul(*a, *b), out))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::add(self.val(*a), self.val(*b))?;
        Ok(self.push(Op::Add(*a, *b), out))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::mul(self.val(*a), self.val(*b))?;
        Ok(self.push(Op::Mul(*a, *b), out))
    }

    fn add_broadcast_row(&mut self, a: &Var, row: &Var) -> Result<Var> {
        let out = ops::add_broadcast_row(self.val(*a), self.val(*row))?;
        Ok(self.push(Op::AddRow(*a, *row), out))
    }

    fn add_scalar(&mut self, a: &Var, c: f64) -> Var {
        let out = self.val(*a).map(|v| v + c);
        self.push(Op::AddScalar(*a), out)
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let out = self.val(*a).map(|v| v * c);
        self.push(Op::Scale(*a, c), out)
    }

    fn relu(&mut self, a: &Var) -> Var {
        let out = ops::relu(self.val(*a));
        self.push(Op::Relu(*a), out)
    }

    fn tanh(&mut self, a: &Var) -> Var {
        let out = self.val(*a).map(f64::tanh);
        self.push(Op::Tanh(*a), out)
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let out = self.val(*a).map(sigmoid_scalar);
        self.push(Op::Sigmoid(*a), out)
    }

    fn exp(&mut self, a: &Var) -> Var {
        let out = self.val(*a).map(f64::exp);
        self.push(Op::Exp(*a), out)
    }

    fn log(&mut self, a: &Var) -> Var {
        let out = self.val(*a).map(f64::ln);
        self.push(Op::Log(*a), out)
    }

    fn clamp(&mut self, a: &Var, lo: f64, hi: f64) -> Var {
        let out = self.val(*a).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp(*a, lo, hi), out)
    }

    fn rowwise_softmax(&mut self, a: &Var) -> Var {
        let out = ops::rowwise_softmax(self.val(*a));
        self.push(Op::RowSoftmax(*a), out)
    }

    fn transpose(&mut self, a: &Var) -> Var {
        let out = self.val(*a).transpose();
        self.push(Op::Transpose(*a), out)
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let out = ops::concat_cols(&parts.iter().map(|p| self.val(*p)).collect::<Vec<_>>())?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out))
    }

    fn sum(&mut self, a: &Var) -> Var {
        let out = Tensor2::scalar(self.val(*a).sum());
        self.push(Op::Sum(*a), out)
    }

    fn mean(&mut self, a: &Var) -> Var {
        let av = self.val(*a);
        let out = Tensor2::scalar(av.sum() / av.len() as f64);
        self.push(Op::Mean(*a), out)
    }

    fn neighbor_softmax_aggregate(
        &mut self,
        messages: &Var,
        adj: &Arc<Adjacency>,
        beta: f64,
    ) -> Result<Var> {
        let out = ops::neighbor_softmax_aggregate(self.val(*messages), adj, beta)?;
        Ok(self.push(Op::Aggregate(*messages, Arc::clone(adj), beta), out))
    }

    fn survival_nll(&mut self, logits: &Var, bin: usize, censored: bool) -> Result<Var> {
        let (loss, dlogits) = ops::survival_nll_logits(self.val(*logits), bin, censored)?;
        Ok(self.push(Op::SurvivalNll(*logits, dlogits), Tensor2::scalar(loss)))
    }
}
