//! Dirichlet distributions: divergences, entropies, the uncertainty
//! decomposition and the EPN training target.

pub mod special;

pub use special::{digamma, log_gamma, trigamma};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::graph::{Graph, Var};
use special::{digamma_raw, ln_gamma_raw};

/// Concentration parameters of a Dirichlet over `C ≥ 2` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    alpha: Vec<f64>,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(invalid(format!("a Dirichlet needs at least 2 classes, got {}", alpha.len())));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(invalid(format!("concentration {a} is not positive and finite")));
        }
        Ok(Self { alpha })
    }

    /// Flat prior `Dir(1, …, 1)`.
    pub fn flat(classes: usize) -> Result<Self> {
        Self::new(vec![1.0; classes])
    }

    /// Posterior `α_c = prior + exp(f_c)` from logits.
    pub fn from_logits(logits: &[f64], prior: f64) -> Result<Self> {
        Self::new(logits.iter().map(|f| prior + f.exp()).collect())
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn classes(&self) -> usize {
        self.alpha.len()
    }

    /// `α₀ = Σ α_c`.
    pub fn precision(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// `ln B(α) = Σ ln Γ(α_c) − ln Γ(α₀)`.
    pub fn log_beta(&self) -> f64 {
        self.alpha.iter().map(|&a| ln_gamma_raw(a)).sum::<f64>() - ln_gamma_raw(self.precision())
    }

    /// Log density at a point of the open simplex.
    pub fn log_pdf(&self, p: &[f64]) -> Result<f64> {
        if p.len() != self.alpha.len() {
            return Err(Error::Shape(format!("point has {} coordinates, Dirichlet {}", p.len(), self.alpha.len())));
        }
        let s: f64 = self.alpha.iter().zip(p).map(|(a, x)| (a - 1.0) * x.ln()).sum();
        Ok(s - self.log_beta())
    }

    pub fn predictive_mean(&self) -> Vec<f64> {
        let a0 = self.precision();
        self.alpha.iter().map(|a| a / a0).collect()
    }

    pub fn differential_entropy(&self) -> f64 {
        differential_entropy(self)
    }

    pub fn expected_entropy(&self) -> f64 {
        expected_entropy(self)
    }

    pub fn mutual_information(&self) -> f64 {
        mutual_information(self)
    }
}

fn check_same_len(p: &DirichletParams, q: &DirichletParams) -> Result<()> {
    if p.classes() != q.classes() {
        return Err(Error::Shape(format!("Dirichlets over {} and {} classes", p.classes(), q.classes())));
    }
    Ok(())
}

/// `KL(Dir(p) ‖ Dir(q))`.
pub fn kl_dirichlet(p: &DirichletParams, q: &DirichletParams) -> Result<f64> {
    check_same_len(p, q)?;
    let (p0, q0) = (p.precision(), q.precision());
    let dp0 = digamma_raw(p0);
    let mut kl = ln_gamma_raw(p0) - ln_gamma_raw(q0);
    for (&a, &b) in p.alpha.iter().zip(&q.alpha) {
        kl += ln_gamma_raw(b) - ln_gamma_raw(a) + (a - b) * (digamma_raw(a) - dp0);
    }
    Ok(kl.max(0.0))
}

/// `ln B(α) + (α₀ − C)ψ(α₀) − Σ (α_c − 1)ψ(α_c)`.
pub fn differential_entropy(d: &DirichletParams) -> f64 {
    let a0 = d.precision();
    let c = d.classes() as f64;
    d.log_beta() + (a0 - c) * digamma_raw(a0) - d.alpha.iter().map(|&a| (a - 1.0) * digamma_raw(a)).sum::<f64>()
}

/// Expected entropy of the categorical under the Dirichlet:
/// `Σ (α_c/α₀)(ψ(α₀+1) − ψ(α_c+1))`.
pub fn expected_entropy(d: &DirichletParams) -> f64 {
    let a0 = d.precision();
    let d0 = digamma_raw(a0 + 1.0);
    d.alpha.iter().map(|&a| (a / a0) * (d0 - digamma_raw(a + 1.0))).sum::<f64>().max(0.0)
}

/// Shannon entropy of a probability vector, in nats.
pub fn categorical_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Total minus data uncertainty, clamped at 0.
pub fn mutual_information(d: &DirichletParams) -> f64 {
    let mi = categorical_entropy(&d.predictive_mean()) - expected_entropy(d);
    mi.max(0.0)
}

/// `α_c = α_c^prior + counts_c`.
pub fn bayesian_update(prior: &DirichletParams, counts: &[f64]) -> Result<DirichletParams> {
    if counts.len() != prior.classes() {
        return Err(Error::Shape(format!("{} counts for {} classes", counts.len(), prior.classes())));
    }
    if let Some(c) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(invalid(format!("pseudo-count {c} is negative or non-finite")));
    }
    DirichletParams::new(prior.alpha.iter().zip(counts).map(|(a, c)| a + c).collect())
}

/// Target Dirichlet for the EPN classification term: 1 everywhere except
/// `C + p̃` at the label, where `p̃ = Σ exp(f_c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpnTarget {
    pub beta: Vec<f64>,
    pub target_class: usize,
}

impl EpnTarget {
    pub fn params(&self) -> Result<DirichletParams> {
        DirichletParams::new(self.beta.clone())
    }
}

fn check_logits(logits: &[f64], y: usize) -> Result<()> {
    if logits.len() < 2 {
        return Err(invalid("need at least 2 logits"));
    }
    if y >= logits.len() {
        return Err(invalid(format!("class {y} out of range for {} classes", logits.len())));
    }
    if logits.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

pub fn epn_target(logits: &[f64], y: usize) -> Result<EpnTarget> {
    check_logits(logits, y)?;
    let c = logits.len() as f64;
    let p: f64 = logits.iter().map(|f| f.exp()).sum();
    let mut beta = vec![1.0; logits.len()];
    beta[y] = c + p;
    Ok(EpnTarget { beta, target_class: y })
}

/// `KL(Dir(β) ‖ Dir(1 + exp f))` written out term by term, using
/// `β_y = α₀` and `β₀ = α₀ + C − 1`.
pub fn epn_kl_expanded(logits: &[f64], y: usize) -> Result<f64> {
    check_logits(logits, y)?;
    let alpha: Vec<f64> = logits.iter().map(|f| 1.0 + f.exp()).collect();
    let c = alpha.len() as f64;
    let a0: f64 = alpha.iter().sum();
    let b0 = a0 + c - 1.0;
    let psi_b0 = digamma_raw(b0);
    let others: f64 = a0 - alpha[y];
    let mut kl = ln_gamma_raw(b0) - 2.0 * ln_gamma_raw(a0);
    for (k, &a) in alpha.iter().enumerate() {
        kl += ln_gamma_raw(a);
        if k != y {
            kl += (1.0 - a) * (digamma_raw(1.0) - psi_b0);
        }
    }
    kl += others * (digamma_raw(a0) - psi_b0);
    Ok(kl)
}

/// `KL(Dir(1 + exp f) ‖ Dir(β))`, the forward direction. Diagnostic only.
pub fn kl_dirichlet_forward_expanded(logits: &[f64], y: usize) -> Result<f64> {
    check_logits(logits, y)?;
    let alpha: Vec<f64> = logits.iter().map(|f| 1.0 + f.exp()).collect();
    let c = alpha.len() as f64;
    let a0: f64 = alpha.iter().sum();
    let b0 = a0 + c - 1.0;
    let psi_a0 = digamma_raw(a0);
    let others = a0 - alpha[y];
    let mut kl = 2.0 * ln_gamma_raw(a0) - ln_gamma_raw(b0);
    for (k, &a) in alpha.iter().enumerate() {
        kl -= ln_gamma_raw(a);
        if k != y {
            kl += (a - 1.0) * (digamma_raw(a) - psi_a0);
        }
    }
    kl -= others * (digamma_raw(alpha[y]) - psi_a0);
    Ok(kl)
}

/// Row-wise `KL(Dir(β) ‖ Dir(α))` on the graph, `N×C` inputs to `N×1`.
pub fn kl_dirichlet_graph(g: &mut Graph, beta: Var, alpha: Var) -> Var {
    let b0 = g.row_sum(beta);
    let a0 = g.row_sum(alpha);
    let lg_b0 = g.lgamma(b0);
    let lg_a0 = g.lgamma(a0);
    let lg_b = g.lgamma(beta);
    let lg_a = g.lgamma(alpha);
    let s_lg_b = g.row_sum(lg_b);
    let s_lg_a = g.row_sum(lg_a);
    // Σ (β−α)(ψ(β) − ψ(β₀)) = Σ (β−α)ψ(β) − ψ(β₀)(β₀ − α₀)
    let diff = g.sub(beta, alpha);
    let psi_b = g.digamma(beta);
    let prod = g.mul(diff, psi_b);
    let cross = g.row_sum(prod);
    let psi_b0 = g.digamma(b0);
    let d0 = g.sub(b0, a0);
    let corr = g.mul(psi_b0, d0);
    let t1 = g.sub(lg_b0, s_lg_b);
    let t2 = g.sub(s_lg_a, lg_a0);
    let t3 = g.sub(cross, corr);
    let t12 = g.add(t1, t2);
    g.add(t12, t3)
}

/// Row-wise differential entropy of `Dir(α)` on the graph, `N×C` to `N×1`.
pub fn dirichlet_entropy_graph(g: &mut Graph, alpha: Var) -> Var {
    let c = g.value(alpha).cols() as f64;
    let a0 = g.row_sum(alpha);
    let lg = g.lgamma(alpha);
    let s_lg = g.row_sum(lg);
    let lg_a0 = g.lgamma(a0);
    let log_b = g.sub(s_lg, lg_a0);
    let a0_c = g.offset(a0, -c);
    let psi_a0 = g.digamma(a0);
    let t2 = g.mul(a0_c, psi_a0);
    let am1 = g.offset(alpha, -1.0);
    let psi_a = g.digamma(alpha);
    let p = g.mul(am1, psi_a);
    let t3 = g.row_sum(p);
    let s = g.add(log_b, t2);
    g.sub(s, t3)
}
