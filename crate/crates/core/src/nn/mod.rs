//! Dense tensors, reverse-mode autodiff, MLPs and the Adam optimizer.

pub mod checkpoint;
pub mod graph;
pub mod network;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{bind, Gradients, Graph, Var};
pub use network::{Activation, Architecture, FinalLayer, Layer, Network, NetworkLayout};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;

use crate::error::{invalid, Result};

/// `max(v) + ln Σ exp(v − max(v))`.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(invalid("logsumexp of an empty vector"));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(invalid("logsumexp needs finite inputs"));
    }
    Ok(m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln())
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let lse = logsumexp(v)?;
    Ok(v.iter().map(|x| (x - lse).exp()).collect())
}

pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    let lse = logsumexp(v)?;
    Ok(v.iter().map(|x| x - lse).collect())
}

/// Row-wise softmax of an `N×C` matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (r, c) = logits.dims2();
    let mut out = Vec::with_capacity(r * c);
    for row in logits.iter_rows() {
        out.extend(softmax(row)?);
    }
    Tensor::matrix(r, c, out)
}
