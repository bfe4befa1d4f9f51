use crate::dirichlet::{dirichlet_entropy_graph, kl_dirichlet_graph};
use crate::ebm::{cd_loss_with_negatives, energy_from_logits, EnergyFn, EnergyMode};
use crate::error::{invalid, Error, Result};
use crate::nn::{Graph, Network, Tensor, Var};

use super::{EntropyTarget, LossWeights};

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(invalid(format!("label {y} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean negative log-softmax probability of the true class.
pub fn ce_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = g.value(logits).dims2();
    check_labels(labels, n, c)?;
    let ls = g.row_log_softmax(logits);
    let picked = g.gather(ls, labels);
    let m = g.mean(picked);
    Ok(g.neg(m))
}

/// DPN target concentrations: 1 everywhere, `1 + β_y` at the label.
pub fn dpn_target(labels: &[usize], classes: usize, beta_y: f64) -> Tensor {
    let mut t = vec![1.0; labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        t[i * classes + y] += beta_y;
    }
    Tensor::raw(labels.len(), classes, t)
}

/// DPN loss with `α = exp(f)`: `mean KL(Dir(target) ‖ Dir(α_id)) +
/// mean KL(Dir(1) ‖ Dir(α_ood))`. Returns `(total, id_term, ood_term)`.
pub fn dpn_loss(
    g: &mut Graph,
    logits_id: Var,
    labels: &[usize],
    logits_ood: Option<Var>,
    beta_y: f64,
) -> Result<(Var, Var, Option<Var>)> {
    if !(beta_y > 0.0) {
        return Err(invalid(format!("DPN target concentration {beta_y} must be positive")));
    }
    let (n, c) = g.value(logits_id).dims2();
    check_labels(labels, n, c)?;
    let target = g.constant(dpn_target(labels, c, beta_y));
    let alpha = g.exp(logits_id);
    let kl = kl_dirichlet_graph(g, target, alpha);
    let id = g.mean(kl);
    let Some(lo) = logits_ood else {
        return Ok((id, id, None));
    };
    let (m, c2) = g.value(lo).dims2();
    if c2 != c {
        return Err(Error::Shape("ID and OOD logits differ in width".into()));
    }
    let flat = g.constant(Tensor::full(m, c, 1.0));
    let alpha = g.exp(lo);
    let kl = kl_dirichlet_graph(g, flat, alpha);
    let ood = g.mean(kl);
    Ok((g.add(id, ood), id, Some(ood)))
}

/// EPN classification term: `mean KL(Dir(β) ‖ Dir(1 + exp f))` with the
/// target built from detached logits.
pub fn epn_kl_term(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = g.value(logits).dims2();
    check_labels(labels, n, c)?;
    let f = g.value(logits);
    let mut beta = vec![1.0; n * c];
    for (i, &y) in labels.iter().enumerate() {
        let p: f64 = f.row(i).iter().map(|v| v.exp()).sum();
        beta[i * c + y] = c as f64 + p;
    }
    let beta = Tensor::new(vec![n, c], beta).map_err(|_| Error::NonFinite("EPN target".into()))?;
    let beta = g.constant(beta);
    let e = g.exp(logits);
    let alpha = g.offset(e, 1.0);
    let kl = kl_dirichlet_graph(g, beta, alpha);
    Ok(g.mean(kl))
}

/// Smoothness term: `−mean H(Dir(a))` with `a = exp f` or `1 + exp f`.
/// Minimizing it raises the differential entropy of that Dirichlet.
pub fn epn_entropy_term(g: &mut Graph, logits: Var, target: EntropyTarget) -> Var {
    let mut a = g.exp(logits);
    if target == EntropyTarget::Posterior {
        a = g.offset(a, 1.0);
    }
    let h = dirichlet_entropy_graph(g, a);
    let m = g.mean(h);
    g.neg(m)
}

/// `mean KL(uniform ‖ softmax(f))` = `−ln C − mean_i (1/C) Σ_c log softmax`.
pub fn oe_loss(g: &mut Graph, logits_ood: Var) -> Var {
    let c = g.value(logits_ood).cols() as f64;
    let ls = g.row_log_softmax(logits_ood);
    let m = g.mean(ls);
    let n = g.neg(m);
    g.offset(n, -c.ln())
}

/// Loss parts recorded for logging.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub density: Option<Var>,
    pub classification: Option<Var>,
    pub regularizer: Option<Var>,
}

/// `cd(E) + γ · ce` on marginal energy, negatives given.
pub fn jem_loss(
    g: &mut Graph,
    params: &[Var],
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    pos: &Tensor,
    negatives: &Tensor,
    gamma: f64,
) -> Result<LossParts> {
    if gamma < 0.0 {
        return Err(invalid("γ must be non-negative"));
    }
    let e = EnergyFn::marginal(net);
    let cd = cd_loss_with_negatives(g, params, &e, pos, negatives)?;
    let xv = g.constant(x.clone());
    let f = net.forward_on(g, params, xv, None);
    let ce = ce_loss(g, f, labels)?;
    let wce = g.scale(ce, gamma);
    Ok(LossParts { total: g.add(cd.loss, wce), density: Some(cd.loss), classification: Some(ce), regularizer: None })
}

/// EPN-M objective: `λ_density · cd + λ_kl · KL + λ_ent · (−H(Dir(exp f)))`.
#[allow(clippy::too_many_arguments)]
pub fn epn_loss(
    g: &mut Graph,
    params: &[Var],
    net: &Network,
    x: &Tensor,
    labels: &[usize],
    pos: &Tensor,
    negatives: &Tensor,
    weights: &LossWeights,
) -> Result<LossParts> {
    let xv = g.constant(x.clone());
    let f = net.forward_on(g, params, xv, None);
    let kl = epn_kl_term(g, f, labels)?;
    let ent = epn_entropy_term(g, f, weights.entropy_target);
    let mut total = g.scale(kl, weights.lambda_kl);
    let went = g.scale(ent, weights.lambda_ent);
    total = g.add(total, went);
    let mut density = None;
    if weights.lambda_density > 0.0 {
        let e = EnergyFn::marginal(net);
        let cd = cd_loss_with_negatives(g, params, &e, pos, negatives)?;
        let w = g.scale(cd.loss, weights.lambda_density);
        total = g.add(total, w);
        density = Some(cd.loss);
    }
    Ok(LossParts { total, density, classification: Some(kl), regularizer: Some(ent) })
}

/// CE plus the energy margin loss on marginal energies.
pub fn energy_ood_loss(
    g: &mut Graph,
    logits_id: Var,
    labels: &[usize],
    logits_ood: Var,
    weights: &LossWeights,
) -> Result<LossParts> {
    let ce = ce_loss(g, logits_id, labels)?;
    let e_id = energy_from_logits(g, logits_id, EnergyMode::Marginal);
    let e_ood = energy_from_logits(g, logits_ood, EnergyMode::Marginal);
    let m = crate::ebm::energy_margin_loss(g, e_id, e_ood, weights.m_in, weights.m_out);
    let wm = g.scale(m, weights.lambda_margin);
    Ok(LossParts { total: g.add(ce, wm), density: Some(m), classification: Some(ce), regularizer: None })
}
