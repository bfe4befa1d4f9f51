use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::graph::softplus;
use crate::models::losses::check_labels;
use crate::nn::{logsumexp, Tensor};

/// How logits map to class probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveForm {
    /// `softmax(f/T)`.
    Softmax,
    /// `(1 + exp(f_c/T)) / Σ (1 + exp(f_k/T))`.
    Epn,
}

/// Class probabilities for one row of logits at temperature `t`.
pub fn predictive_probs(logits: &[f64], form: PredictiveForm, t: f64) -> Result<Vec<f64>> {
    let u: Vec<f64> = match form {
        PredictiveForm::Softmax => logits.iter().map(|f| f / t).collect(),
        PredictiveForm::Epn => logits.iter().map(|f| softplus(f / t)).collect(),
    };
    let lse = logsumexp(&u)?;
    Ok(u.iter().map(|v| (v - lse).exp()).collect())
}

fn log_prob_of(logits: &[f64], y: usize, form: PredictiveForm, t: f64) -> f64 {
    let u: Vec<f64> = match form {
        PredictiveForm::Softmax => logits.iter().map(|f| f / t).collect(),
        PredictiveForm::Epn => logits.iter().map(|f| softplus(f / t)).collect(),
    };
    u[y] - logsumexp(&u).unwrap_or(f64::NAN)
}

/// Mean negative log-likelihood at temperature `t`.
pub fn nll(logits: &Tensor, labels: &[usize], form: PredictiveForm, t: f64) -> Result<f64> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if labels.is_empty() {
        return Err(invalid("NLL of an empty set"));
    }
    if !(t > 0.0) {
        return Err(invalid(format!("temperature {t} must be positive")));
    }
    let s: f64 = logits.iter_rows().zip(labels).map(|(r, &y)| -log_prob_of(r, y, form, t)).sum();
    Ok(s / labels.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    /// Every row had identical logits, so `T` has no effect.
    pub degenerate: bool,
}

const LOG_T_MIN: f64 = -4.605_170_185_988_091; // ln 0.01
const LOG_T_MAX: f64 = 4.605_170_185_988_091; // ln 100
const GRID: usize = 241;

/// Fits one temperature by minimizing validation NLL: a log-spaced grid over
/// `[0.01, 100]`, golden-section refinement around the best grid point, and
/// a final comparison against `T = 1`.
pub fn temperature_fit(logits: &Tensor, labels: &[usize], form: PredictiveForm) -> Result<TemperatureFit> {
    let before = nll(logits, labels, form, 1.0)?;
    let degenerate = logits.iter_rows().all(|r| r.iter().all(|&v| v == r[0]));
    if degenerate {
        log::warn!("all validation logits are identical within rows; keeping T = 1");
        return Ok(TemperatureFit { temperature: 1.0, nll_before: before, nll_after: before, degenerate });
    }
    let f = |lt: f64| nll(logits, labels, form, lt.exp()).unwrap_or(f64::INFINITY);
    let step = (LOG_T_MAX - LOG_T_MIN) / (GRID - 1) as f64;
    let grid: Vec<f64> = (0..GRID).map(|i| LOG_T_MIN + step * i as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&lt| f(lt)).collect();
    let best = vals
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < vals[b] { i } else { b });
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(GRID - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let mut cands = vec![(grid[best], vals[best]), (c, fc), (d, fd)];
    cands.push((0.0, before));
    let (lt, v) = cands.into_iter().fold((0.0, before), |acc, x| if x.1 < acc.1 { x } else { acc });
    Ok(TemperatureFit { temperature: lt.exp(), nll_before: before, nll_after: v, degenerate: false })
}
