use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_width, energy_input_grad_chunked, EnergyModel};
use crate::error::{invalid, Error, Result};
use crate::nn::{Graph, Network, Tensor};
use crate::par::{row_chunks, Exec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgldConfig {
    /// Step size `α`.
    pub step_size: f64,
    /// Number of updates `K`.
    pub steps: usize,
    /// Gaussian noise multiplier; `None` uses `α`.
    pub noise_scale: Option<f64>,
    /// Per-chain L2 clip on the energy gradient.
    pub grad_clip: f64,
    /// Rows per gradient job.
    pub chunk_rows: usize,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self { step_size: 0.01, steps: 100, noise_scale: None, grad_clip: 1e3, chunk_rows: 64 }
    }
}

impl SgldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!("SGLD step size {} must be positive", self.step_size)));
        }
        if let Some(s) = self.noise_scale {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(invalid(format!("SGLD noise scale {s} must be non-negative")));
            }
        }
        if !(self.grad_clip > 0.0) || self.chunk_rows == 0 {
            return Err(invalid("SGLD gradient clip and chunk size must be positive"));
        }
        Ok(())
    }

    pub fn noise(&self) -> f64 {
        self.noise_scale.unwrap_or(self.step_size)
    }
}

fn clip_row(g: &mut [f64], max_norm: f64) {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > max_norm {
        let k = max_norm / n;
        g.iter_mut().for_each(|v| *v *= k);
    }
}

fn noise_tensor<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()
}

/// Langevin chains `x ← x − (α²/2)∇ₓE(x) + σz`, `K` steps from `x0`.
///
/// Noise is drawn from `rng` on the calling thread in row order, and only
/// gradient evaluation is spread over `exec`, so the result does not
/// depend on the execution mode.
pub fn sgld_sample<E: EnergyModel + ?Sized, R: Rng + ?Sized>(
    e: &E,
    x0: &Tensor,
    cfg: &SgldConfig,
    rng: &mut R,
    exec: Exec,
) -> Result<Tensor> {
    cfg.validate()?;
    check_width(e.input_dim(), x0)?;
    if !x0.is_finite() {
        return Err(Error::NonFinite("initial SGLD state".into()));
    }
    let (n, d) = x0.dims2();
    let mut x = x0.as_matrix();
    let drift = 0.5 * cfg.step_size * cfg.step_size;
    let sigma = cfg.noise();
    for k in 0..cfg.steps {
        let (_, mut grad) = energy_input_grad_chunked(e, &x, cfg.chunk_rows, exec)
            .map_err(|err| Error::Divergence { step: k, reason: err.to_string() })?;
        let z = if sigma > 0.0 { noise_tensor(n, d, rng) } else { Vec::new() };
        for i in 0..n {
            clip_row(grad.row_mut(i), cfg.grad_clip);
        }
        let xs = x.data_mut();
        for (j, v) in xs.iter_mut().enumerate() {
            *v -= drift * grad.data()[j];
            if sigma > 0.0 {
                *v += sigma * z[j];
            }
        }
        if !x.is_finite() {
            return Err(Error::Divergence { step: k, reason: "non-finite SGLD state".into() });
        }
    }
    Ok(x)
}

/// Predictive entropy `H(softmax(f(x)))` per row and its input gradient.
fn entropy_input_grad(net: &Network, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let mut g = Graph::new();
    let p = net.bind(&mut g, false);
    let xv = g.param(x.clone());
    let f = net.forward_on(&mut g, &p, xv, None);
    let h = super::predictive_entropy_graph(&mut g, f);
    let values = g.checked_value(h)?.data().to_vec();
    let total = g.sum(h);
    let grads = g.backward(total)?;
    Ok((values, grads.get_or_zeros(xv, x)))
}

/// Predictive entropy of `net` for each row.
pub fn predictive_entropy(net: &Network, x: &Tensor) -> Result<Vec<f64>> {
    Ok(entropy_input_grad(net, x)?.0)
}

/// Langevin descent on predictive entropy:
/// `x ← x − (α/2)∇ₓH + N(0, α)`.
pub fn entropy_sgld<R: Rng + ?Sized>(
    net: &Network,
    x0: &Tensor,
    cfg: &SgldConfig,
    rng: &mut R,
    exec: Exec,
) -> Result<Tensor> {
    cfg.validate()?;
    check_width(net.input_dim(), x0)?;
    let (n, d) = x0.dims2();
    let mut x = x0.as_matrix();
    let sd = cfg.noise_scale.unwrap_or(cfg.step_size.sqrt());
    for k in 0..cfg.steps {
        let chunks = row_chunks(n, cfg.chunk_rows);
        let parts = exec.map(&chunks, |&(s, t)| entropy_input_grad(net, &x.slice_rows(s, t)));
        let mut grad = Vec::with_capacity(n * d);
        for part in parts {
            let (_, gr) = part.map_err(|err| Error::Divergence { step: k, reason: err.to_string() })?;
            grad.extend(gr.into_data());
        }
        for row in grad.chunks_mut(d) {
            clip_row(row, cfg.grad_clip);
        }
        let z = if sd > 0.0 { noise_tensor(n, d, rng) } else { Vec::new() };
        for (j, v) in x.data_mut().iter_mut().enumerate() {
            *v -= 0.5 * cfg.step_size * grad[j];
            if sd > 0.0 {
                *v += sd * z[j];
            }
        }
        if !x.is_finite() {
            return Err(Error::Divergence { step: k, reason: "non-finite SGLD state".into() });
        }
    }
    Ok(x)
}
