use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter of a [`ParamStore`], with decoupled
/// weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Tensor2::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. The gradients in `params` must hold the sum over
    /// `accumulation_count` samples; they are averaged, used and then zeroed.
    pub fn step(&mut self, params: &mut ParamStore, accumulation_count: usize) -> Result<()> {
        if accumulation_count == 0 {
            return Err(Error::Config("accumulation_count must be >= 1".into()));
        }
        if self.first.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            if !p.grad.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient in parameter {:?}",
                    p.name
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        let scale = 1.0 / accumulation_count as f64;
        let correction1 = 1.0 - beta1.powi(self.step as i32);
        let correction2 = 1.0 - beta2.powi(self.step as i32);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let values = p.value.data_mut();
            let grads = p.grad.data_mut();
            for (((w, g), m), v) in values
                .iter_mut()
                .zip(grads.iter_mut())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let grad = *g * scale;
                *w -= lr * weight_decay * *w;
                *m = beta1 * *m + (1.0 - beta1) * grad;
                *v = beta2 * *v + (1.0 - beta2) * grad * grad;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(
    params: &mut ParamStore,
    state: &mut AdamState,
    accumulation_count: usize,
) -> Result<()> {
    state.step(params, accumulation_count)
}
