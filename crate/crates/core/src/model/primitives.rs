use crate::error::{Error, Result};
use crate::nn::ops::{sigmoid_scalar, LOGIT_CLAMP};

/// Message from node `u`: `ReLU(h_u + h_e) + eps`, with the edge term only
/// when edge features exist.
pub fn message_construct_phi(h_u: &[f64], h_edge: Option<&[f64]>, eps: f64) -> Result<Vec<f64>> {
    match h_edge {
        Some(e) if e.len() != h_u.len() => Err(Error::Shape {
            op: "message_construct_phi",
            left: (1, h_u.len()),
            right: (1, e.len()),
        }),
        Some(e) => Ok(h_u
            .iter()
            .zip(e)
            .map(|(h, e)| (h + e).max(0.0) + eps)
            .collect()),
        None => Ok(h_u.iter().map(|h| h.max(0.0) + eps).collect()),
    }
}

/// Channel-wise softmax aggregation of a set of messages:
/// `m[c] = sum_u softmax_u(beta * m_u[c]) * m_u[c]`.
pub fn softmax_aggregate_rho(messages: &[Vec<f64>], beta: f64) -> Result<Vec<f64>> {
    let Some(first) = messages.first() else {
        return Err(Error::EmptyGraph("no messages to aggregate".into()));
    };
    if !(beta > 0.0) {
        return Err(Error::Config(format!("beta must be positive, got {beta}")));
    }
    let d = first.len();
    if let Some(m) = messages.iter().find(|m| m.len() != d) {
        return Err(Error::Shape {
            op: "softmax_aggregate_rho",
            left: (1, d),
            right: (1, m.len()),
        });
    }
    Ok((0..d)
        .map(|c| {
            let max = messages
                .iter()
                .map(|m| beta * m[c])
                .fold(f64::NEG_INFINITY, f64::max);
            let (num, den) = messages.iter().fold((0.0, 0.0), |(n, z), m| {
                let w = (beta * m[c] - max).exp();
                (n + w * m[c], z + w)
            });
            num / den
        })
        .collect())
}

/// Hazards, survival curve and scalar risk derived from hazard logits.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SurvivalOutput {
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
    /// `-sum_t S(t)`; larger means worse prognosis.
    pub risk: f64,
}

/// `h = sigmoid(clamp(z))`, `S(t) = prod_{s<=t} (1 - h_s)`, `risk = -sum S`.
pub fn survival_from_logits(logits: &[f64]) -> SurvivalOutput {
    let hazards: Vec<f64> = logits
        .iter()
        .map(|z| sigmoid_scalar(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)))
        .collect();
    let survival: Vec<f64> = hazards
        .iter()
        .scan(1.0, |s, h| {
            *s *= 1.0 - h;
            Some(*s)
        })
        .collect();
    let risk = -survival.iter().sum::<f64>();
    SurvivalOutput {
        hazards,
        survival,
        risk,
    }
}
