use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warm-up length; 0 disables warm-up.
    pub warmup_steps: u64,
    /// L2 penalty added to the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, warmup_steps: 2500, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    /// Learning rate used at step `t` (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (t as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        let zeros = |p: &&Tensor| Tensor::zeros(p.shape().to_vec());
        Self {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Learning rate that the next call to [`adam_step`] will use.
    pub fn next_lr(&self) -> f64 {
        self.config.lr_at(self.step + 1)
    }
}

/// One Adam update with warm-up-scaled learning rate.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(Error::Shape(format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    state.step += 1;
    let t = state.step;
    let c = &state.config;
    let lr = c.lr_at(t);
    let bc1 = 1.0 - c.beta1.powf(t as f64);
    let bc2 = 1.0 - c.beta2.powf(t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i].data()[k] + c.weight_decay * *w;
            m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
            v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            *w -= lr * mh / (vh.sqrt() + c.eps);
        }
    }
    Ok(())
}
