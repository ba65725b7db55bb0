//! Forward kernels shared by eager evaluation and the gradient tape.

use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::nn::Tensor2;

pub(crate) fn same_shape(op: &'static str, a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

pub(crate) fn zip_map(a: &Tensor2, b: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor2::new(a.rows(), a.cols(), data).expect("shapes checked by caller")
}

pub fn add(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    same_shape("add", a, b)?;
    Ok(zip_map(a, b, |x, y| x + y))
}

pub fn mul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    same_shape("mul", a, b)?;
    Ok(zip_map(a, b, |x, y| x * y))
}

/// Adds a `1 x n` row to every row of an `m x n` matrix.
pub fn add_broadcast_row(a: &Tensor2, row: &Tensor2) -> Result<Tensor2> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(Error::Shape {
            op: "add_broadcast_row",
            left: a.shape(),
            right: row.shape(),
        });
    }
    let mut out = a.clone();
    for r in 0..out.rows() {
        for (v, b) in out.row_mut(r).iter_mut().zip(row.data()) {
            *v += b;
        }
    }
    Ok(out)
}

pub fn relu(a: &Tensor2) -> Tensor2 {
    a.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(v))` without overflow.
pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

pub fn sigmoid(a: &Tensor2) -> Tensor2 {
    a.map(sigmoid_scalar)
}

/// Softmax of each row, computed after subtracting the row maximum.
pub fn rowwise_softmax(a: &Tensor2) -> Tensor2 {
    let mut out = a.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
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

pub fn concat_cols(parts: &[&Tensor2]) -> Result<Tensor2> {
    let rows = parts.first().map_or(0, |p| p.rows());
    for p in parts {
        if p.rows() != rows {
            return Err(Error::Shape {
                op: "concat_cols",
                left: (rows, parts[0].cols()),
                right: p.shape(),
            });
        }
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor2::new(rows, cols, data)
}

/// Iterates the message sources of node `v`: its neighbors, or `v` itself
/// when it has none.
pub(crate) fn sources(adj: &Adjacency, v: usize) -> SourceIter<'_> {
    let nbrs = adj.neighbors(v);
    if nbrs.is_empty() {
        SourceIter::Own(Some(v))
    } else {
        SourceIter::Neighbors(nbrs.iter())
    }
}

pub(crate) enum SourceIter<'a> {
    Own(Option<usize>),
    Neighbors(std::slice::Iter<'a, u32>),
}

impl Iterator for SourceIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            SourceIter::Own(v) => v.take(),
            SourceIter::Neighbors(it) => it.next().map(|&u| u as usize),
        }
    }
}

/// Channel-wise softmax aggregation of per-node messages over graph
/// neighborhoods:
/// `out[v, c] = sum_u softmax_u(beta * msg[u, c]) * msg[u, c]`.
///
/// A node without neighbors aggregates its own message.
pub fn neighbor_softmax_aggregate(
    messages: &Tensor2,
    adj: &Adjacency,
    beta: f64,
) -> Result<Tensor2> {
    if adj.n_nodes() != messages.rows() {
        return Err(Error::Shape {
            op: "neighbor_softmax_aggregate",
            left: messages.shape(),
            right: (adj.n_nodes(), adj.n_nodes()),
        });
    }
    let d = messages.cols();
    let mut out = Tensor2::zeros(messages.rows(), d);
    let mut max = vec![0.0; d];
    let mut num = vec![0.0; d];
    let mut den = vec![0.0; d];
    for v in 0..messages.rows() {
        max.fill(f64::NEG_INFINITY);
        for u in sources(adj, v) {
            for (m, &x) in max.iter_mut().zip(messages.row(u)) {
                *m = m.max(beta * x);
            }
        }
        num.fill(0.0);
        den.fill(0.0);
        for u in sources(adj, v) {
            for (c, &x) in messages.row(u).iter().enumerate() {
                let w = (beta * x - max[c]).exp();
                num[c] += w * x;
                den[c] += w;
            }
        }
        for (o, (n, z)) in out.row_mut(v).iter_mut().zip(num.iter().zip(&den)) {
            *o = n / z;
        }
    }
    Ok(out)
}

/// Logits are clamped to this range before sigmoid and log terms.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Negative log-likelihood of a discrete-time survival observation given
/// hazard logits (`1 x n_bins`). Returns the loss and its gradient with
/// respect to the logits.
///
/// With `h = sigmoid(z)`, `-log h = softplus(-z)` and
/// `-log(1 - h) = softplus(z)`.
pub fn survival_nll_logits(logits: &Tensor2, bin: usize, censored: bool) -> Result<(f64, Tensor2)> {
    if logits.rows() != 1 || bin >= logits.cols() {
        return Err(Error::Shape {
            op: "survival_nll",
            left: logits.shape(),
            right: (1, bin + 1),
        });
    }
    let mut loss = 0.0;
    let mut grad = Tensor2::zeros(1, logits.cols());
    for s in 0..=bin {
        let raw = logits.data()[s];
        let z = raw.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
        let inside = raw == z;
        let g = if s == bin && !censored {
            loss += softplus(-z);
            sigmoid_scalar(z) - 1.0
        } else {
            loss += softplus(z);
            sigmoid_scalar(z)
        };
        grad.data_mut()[s] = if inside { g } else { 0.0 };
    }
    Ok((loss, grad))
}
