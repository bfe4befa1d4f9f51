use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::models::ModelBundle;
use crate::nn::{Graph, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackNorm {
    L2,
    Linf,
}

impl fmt::Display for AttackNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackNorm::L2 => "l2",
            AttackNorm::Linf => "linf",
        })
    }
}

impl FromStr for AttackNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(AttackNorm::L2),
            "linf" => Ok(AttackNorm::Linf),
            _ => Err(invalid(format!("unknown norm `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgm,
    Pgd,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::Fgm => "fgm",
            AttackKind::Pgd => "pgd",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgm" => Ok(AttackKind::Fgm),
            "pgd" => Ok(AttackKind::Pgd),
            _ => Err(invalid(format!("unknown attack `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutput {
    pub x: Tensor,
    /// Rows whose loss gradient vanished under the L2 norm and were left unchanged.
    pub zero_gradient_rows: Vec<usize>,
}

/// `∇ₓ Σ_i −log p(y_i | x_i)` under the bundle's predictive distribution.
pub fn loss_input_gradient(bundle: &ModelBundle, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    crate::models::losses::check_labels(labels, x.rows(), bundle.classes())?;
    let mut g = Graph::new();
    let xv = g.param(x.as_matrix());
    let lp = bundle.predictive_log_probs_on(&mut g, xv)?;
    let picked = g.gather(lp, labels);
    let s = g.sum(picked);
    let loss = g.neg(s);
    g.checked_value(loss)?;
    let grads = g.backward(loss)?;
    Ok(grads.get_or_zeros(xv, x))
}

fn ascent_step(x: &Tensor, grad: &Tensor, size: f64, norm: AttackNorm, zero: &mut Vec<usize>) -> Tensor {
    let mut out = x.as_matrix();
    for i in 0..x.rows() {
        let g = grad.row(i);
        let row = out.row_mut(i);
        match norm {
            AttackNorm::Linf => {
                for (v, d) in row.iter_mut().zip(g) {
                    if *d != 0.0 {
                        *v += size * d.signum();
                    }
                }
            }
            AttackNorm::L2 => {
                let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    zero.push(i);
                    continue;
                }
                for (v, d) in row.iter_mut().zip(g) {
                    *v += size * d / n;
                }
            }
        }
    }
    out
}

fn project(x0: &Tensor, x: &mut Tensor, eps: f64, norm: AttackNorm) {
    for i in 0..x0.rows() {
        let base = x0.row(i);
        let row = x.row_mut(i);
        match norm {
            AttackNorm::Linf => {
                for (v, b) in row.iter_mut().zip(base) {
                    *v = v.clamp(b - eps, b + eps);
                }
            }
            AttackNorm::L2 => {
                let n = row.iter().zip(base).map(|(v, b)| (v - b) * (v - b)).sum::<f64>().sqrt();
                if n > eps {
                    let k = eps / n;
                    for (v, b) in row.iter_mut().zip(base) {
                        *v = b + (*v - b) * k;
                    }
                }
            }
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(invalid(format!("attack radius {eps} must be finite and non-negative")));
    }
    Ok(())
}

/// Single signed (L∞) or normalized (L2) gradient-ascent step of size `eps`.
pub fn fgm_attack(bundle: &ModelBundle, x: &Tensor, labels: &[usize], eps: f64, norm: AttackNorm) -> Result<AttackOutput> {
    check_eps(eps)?;
    if eps == 0.0 {
        return Ok(AttackOutput { x: x.as_matrix(), zero_gradient_rows: Vec::new() });
    }
    let grad = loss_input_gradient(bundle, x, labels)?;
    let mut zero = Vec::new();
    let out = ascent_step(x, &grad, eps, norm, &mut zero);
    Ok(AttackOutput { x: out, zero_gradient_rows: zero })
}

/// Iterated ascent steps of size `step`, projected onto the `eps`-ball
/// around `x` after each step. Starts at `x`.
pub fn pgd_attack(
    bundle: &ModelBundle,
    x: &Tensor,
    labels: &[usize],
    eps: f64,
    step: f64,
    n_steps: usize,
    norm: AttackNorm,
) -> Result<AttackOutput> {
    check_eps(eps)?;
    if !(step > 0.0) || n_steps == 0 {
        return Err(invalid("PGD needs a positive step and at least one iteration"));
    }
    let mut cur = x.as_matrix();
    let mut zero = Vec::new();
    for _ in 0..n_steps {
        let grad = loss_input_gradient(bundle, &cur, labels)?;
        zero.clear();
        cur = ascent_step(&cur, &grad, step, norm, &mut zero);
        project(x, &mut cur, eps, norm);
    }
    Ok(AttackOutput { x: cur, zero_gradient_rows: zero })
}

/// PGD with the default schedule: step `eps/4`, 40 iterations.
pub fn pgd_default(bundle: &ModelBundle, x: &Tensor, labels: &[usize], eps: f64, norm: AttackNorm) -> Result<AttackOutput> {
    if eps == 0.0 {
        return Ok(AttackOutput { x: x.as_matrix(), zero_gradient_rows: Vec::new() });
    }
    pgd_attack(bundle, x, labels, eps, eps / 4.0, 40, norm)
}
