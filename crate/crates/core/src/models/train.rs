//! Training loops for every model kind.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::flow::flow_nll_loss;
use super::losses::{ce_loss, dpn_loss, energy_ood_loss, epn_loss, jem_loss, oe_loss, LossParts};
use super::{job_rng, ModelBundle, ModelKind};
use crate::ebm::{
    cd_loss_with_negatives, cnce_loss, sgld_sample, ssm_loss, BaseSampler, EnergyFn, EnergyMode, ReplayBuffer,
    SgldConfig,
};
use crate::error::{invalid, Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Graph, Network, Tensor, Var};
use crate::par::Exec;

/// Objective for `scalar_ebm` models.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EbmObjective {
    #[default]
    Cd,
    Ssm,
    Cnce,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    /// Uniform over the training-data bounding box widened by `box_margin`.
    #[default]
    UniformBox,
    StandardNormal,
}

/// Which snapshot a run keeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Best validation accuracy.
    #[default]
    Accuracy,
    /// Best validation AUC-PR against the validation OOD set, using the
    /// kind's first default score.
    OodAucPr,
    /// The final parameters.
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Weight decay for the plain classifiers (ce, oe, ensemble, mc_dropout).
    pub classifier_weight_decay: f64,
    pub sgld: SgldConfig,
    pub buffer_capacity: usize,
    pub reinit_prob: f64,
    pub base_sampler: BaseKind,
    pub box_margin: f64,
    /// Variance of Gaussian noise added to positive samples in contrastive divergence.
    pub data_noise_var: f64,
    pub objective: EbmObjective,
    pub ssm_projections: usize,
    pub hvp_epsilon: f64,
    pub cnce_sigma: f64,
    /// Auxiliary outliers are uniform over the data box widened by this
    /// multiple of its extent on each side.
    pub aux_ood_margin: f64,
    pub selection: Selection,
    /// Validation interval in steps; 0 validates only at the end.
    pub eval_every: usize,
    /// Record interval in steps; 0 disables step records.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 64,
            optimizer: AdamConfig::default(),
            classifier_weight_decay: 5e-4,
            sgld: SgldConfig::default(),
            buffer_capacity: 10_000,
            reinit_prob: 0.05,
            base_sampler: BaseKind::UniformBox,
            box_margin: 0.1,
            data_noise_var: 0.1,
            objective: EbmObjective::Cd,
            ssm_projections: 1,
            hvp_epsilon: 1e-3,
            cnce_sigma: 0.1,
            aux_ood_margin: 1.0,
            selection: Selection::Accuracy,
            eval_every: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.reinit_prob) {
            return Err(invalid(format!("reinit_prob {} outside [0, 1]", self.reinit_prob)));
        }
        if self.buffer_capacity == 0 {
            return Err(invalid("buffer_capacity must be positive"));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        for (name, v) in [
            ("classifier_weight_decay", self.classifier_weight_decay),
            ("box_margin", self.box_margin),
            ("data_noise_var", self.data_noise_var),
            ("aux_ood_margin", self.aux_ood_margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if self.ssm_projections == 0 || !(self.hvp_epsilon > 0.0) || !(self.cnce_sigma > 0.0) {
            return Err(invalid("score-matching and NCE settings must be positive"));
        }
        self.sgld.validate()
    }
}

/// One logged training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub member: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub density: Option<f64>,
    pub classification: Option<f64>,
    pub regularizer: Option<f64>,
    pub grad_norm: f64,
    pub energy_pos: Option<f64>,
    pub energy_neg: Option<f64>,
}

/// A validation metric computed during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub member: usize,
    pub step: usize,
    pub metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    /// Step of the kept snapshot for each member.
    pub selected_steps: Vec<usize>,
}

/// Held-out data for model selection.
#[derive(Clone, Copy, Debug)]
pub struct Validation<'a> {
    pub x: &'a Tensor,
    pub labels: &'a [usize],
    pub ood: Option<&'a Tensor>,
}

struct Context<'a> {
    kind: ModelKind,
    cfg: &'a TrainConfig,
    template: &'a ModelBundle,
    x: &'a Tensor,
    labels: &'a [usize],
    val: Option<Validation<'a>>,
    aux: Option<BaseSampler>,
    exec: Exec,
}

/// Trains `bundle` on `(x, labels)` with a generator derived from `seed`.
/// `labels` may be empty for the unsupervised kinds.
pub fn train(
    bundle: &mut ModelBundle,
    x: &Tensor,
    labels: &[usize],
    val: Option<Validation<'_>>,
    cfg: &TrainConfig,
    seed: u64,
    exec: Exec,
) -> Result<TrainSummary> {
    cfg.validate()?;
    let kind = bundle.kind();
    if x.rows() == 0 {
        return Err(invalid("empty training set"));
    }
    if x.cols() != bundle.input_dim() {
        return Err(Error::Shape(format!("training width {} but model expects {}", x.cols(), bundle.input_dim())));
    }
    if kind.is_classifier() {
        super::losses::check_labels(labels, x.rows(), bundle.classes())?;
    }
    if cfg.selection == Selection::OodAucPr && val.is_some_and(|v| v.ood.is_none()) {
        return Err(invalid("OOD-based selection needs a validation OOD set"));
    }
    if kind == ModelKind::CouplingFlow {
        return train_flow(bundle, x, cfg, seed);
    }
    let aux = if kind.uses_aux_ood() { Some(BaseSampler::bounding_box(x, cfg.aux_ood_margin)?) } else { None };
    let template = bundle.clone();
    let ctx = Context { kind, cfg, template: &template, x, labels, val, aux, exec };
    // Ensemble members train independently; inner work then runs sequentially.
    let (outer, inner) = if bundle.members().len() > 1 { (exec, Exec::Sequential) } else { (Exec::Sequential, exec) };
    let ctx = Context { exec: inner, ..ctx };
    let results = outer.map_mut(bundle.members_mut(), |i, net| {
        let mut rng = job_rng(seed, i as u64);
        train_network(&ctx, i, net, &mut rng)
    });
    let mut summary = TrainSummary::default();
    for r in results {
        let (records, evals, step) = r?;
        summary.records.extend(records);
        summary.evals.extend(evals);
        summary.selected_steps.push(step);
    }
    Ok(summary)
}

fn sample_batch(x: &Tensor, labels: &[usize], n: usize, rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..x.rows())).collect();
    let y = if labels.is_empty() { Vec::new() } else { idx.iter().map(|&i| labels[i]).collect() };
    (x.select_rows(&idx), y)
}

fn add_noise(x: &Tensor, var: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut out = x.as_matrix();
    if var > 0.0 {
        let sd = var.sqrt();
        for v in out.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sd * z;
        }
    }
    out
}

struct Sampler {
    buffer: ReplayBuffer,
}

impl Sampler {
    fn negatives(
        &mut self,
        net: &Network,
        mode: EnergyMode,
        n: usize,
        sgld: &SgldConfig,
        rng: &mut ChaCha8Rng,
        exec: Exec,
    ) -> Result<Tensor> {
        let e = EnergyFn::new(net, mode)?;
        let draw = self.buffer.draw(n, rng)?;
        let neg = sgld_sample(&e, &draw.x, sgld, rng, exec)?;
        self.buffer.write_back(&draw, &neg)?;
        Ok(neg)
    }
}

struct StepOut {
    parts: LossParts,
    energy_pos: Option<f64>,
    energy_neg: Option<f64>,
}

fn classifier_logits(g: &mut Graph, p: &[Var], net: &Network, xb: &Tensor, rng: &mut ChaCha8Rng) -> Var {
    let xv = g.constant(xb.clone());
    if net.dropout() > 0.0 {
        net.forward_on(g, p, xv, Some(rng))
    } else {
        net.forward_on(g, p, xv, None)
    }
}

#[allow(clippy::too_many_arguments)]
fn step_loss(
    ctx: &Context<'_>,
    g: &mut Graph,
    p: &[Var],
    net: &Network,
    xb: &Tensor,
    yb: &[usize],
    sampler: Option<&mut Sampler>,
    rng: &mut ChaCha8Rng,
) -> Result<StepOut> {
    let cfg = ctx.cfg;
    let w = &ctx.template.spec().weights;
    let n = xb.rows();
    let plain = |total: Var, ce: Var| LossParts { total, density: None, classification: Some(ce), regularizer: None };
    let out = |parts| StepOut { parts, energy_pos: None, energy_neg: None };
    match ctx.kind {
        ModelKind::Ce | ModelKind::Ensemble | ModelKind::McDropout => {
            let f = classifier_logits(g, p, net, xb, rng);
            let ce = ce_loss(g, f, yb)?;
            Ok(out(plain(ce, ce)))
        }
        ModelKind::Oe => {
            let f = classifier_logits(g, p, net, xb, rng);
            let ce = ce_loss(g, f, yb)?;
            let ood = ctx.aux.as_ref().expect("aux sampler").sample(n, rng);
            let fo = classifier_logits(g, p, net, &ood, rng);
            let oe = oe_loss(g, fo);
            let woe = g.scale(oe, w.lambda_oe);
            Ok(out(LossParts { total: g.add(ce, woe), density: None, classification: Some(ce), regularizer: Some(oe) }))
        }
        ModelKind::Dpn => {
            let f = classifier_logits(g, p, net, xb, rng);
            let ood = ctx.aux.as_ref().expect("aux sampler").sample(n, rng);
            let fo = classifier_logits(g, p, net, &ood, rng);
            let (total, id, ood_t) = dpn_loss(g, f, yb, Some(fo), w.dpn_beta_y)?;
            Ok(out(LossParts { total, density: None, classification: Some(id), regularizer: ood_t }))
        }
        ModelKind::EnergyOod => {
            let f = classifier_logits(g, p, net, xb, rng);
            let ood = ctx.aux.as_ref().expect("aux sampler").sample(n, rng);
            let fo = classifier_logits(g, p, net, &ood, rng);
            Ok(out(energy_ood_loss(g, f, yb, fo, w)?))
        }
        ModelKind::Jem | ModelKind::EpnM => {
            let needs_density = ctx.kind == ModelKind::Jem || w.lambda_density > 0.0;
            let (pos, neg) = if needs_density {
                let s = sampler.expect("sampler for energy kinds");
                let neg = s.negatives(net, EnergyMode::Marginal, n, &cfg.sgld, rng, ctx.exec)?;
                (add_noise(xb, cfg.data_noise_var, rng), neg)
            } else {
                (xb.clone(), Tensor::zeros(vec![0, xb.cols()]))
            };
            let parts = if ctx.kind == ModelKind::Jem {
                jem_loss(g, p, net, xb, yb, &pos, &neg, w.gamma)?
            } else {
                epn_loss(g, p, net, xb, yb, &pos, &neg, w)?
            };
            let (ep, en) = if needs_density { energy_means(net, EnergyMode::Marginal, &pos, &neg)? } else { (None, None) };
            Ok(StepOut { parts, energy_pos: ep, energy_neg: en })
        }
        ModelKind::ScalarEbm => {
            let e = EnergyFn::new(net, EnergyMode::Scalar)?;
            let loss = match cfg.objective {
                EbmObjective::Cd => {
                    let s = sampler.expect("sampler for energy kinds");
                    let neg = s.negatives(net, EnergyMode::Scalar, n, &cfg.sgld, rng, ctx.exec)?;
                    let pos = add_noise(xb, cfg.data_noise_var, rng);
                    let cd = cd_loss_with_negatives(g, p, &e, &pos, &neg)?;
                    return Ok(StepOut {
                        parts: LossParts { total: cd.loss, density: Some(cd.loss), classification: None, regularizer: None },
                        energy_pos: Some(cd.energy_pos),
                        energy_neg: Some(cd.energy_neg),
                    });
                }
                EbmObjective::Ssm => ssm_loss(g, p, &e, xb, cfg.ssm_projections, cfg.hvp_epsilon, rng)?,
                EbmObjective::Cnce => cnce_loss(g, p, &e, xb, cfg.cnce_sigma, rng)?,
            };
            Ok(out(LossParts { total: loss, density: Some(loss), classification: None, regularizer: None }))
        }
        ModelKind::CouplingFlow => unreachable!("flows train separately"),
    }
}

fn energy_means(net: &Network, mode: EnergyMode, pos: &Tensor, neg: &Tensor) -> Result<(Option<f64>, Option<f64>)> {
    use crate::ebm::EnergyModel;
    let e = EnergyFn::new(net, mode)?;
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    Ok((Some(mean(e.energies(pos)?)), Some(mean(e.energies(neg)?))))
}

fn validation_metric(ctx: &Context<'_>, net: &Network) -> Result<Option<f64>> {
    let Some(val) = ctx.val else { return Ok(None) };
    let mut bundle = ctx.template.clone();
    bundle.members = vec![net.clone()];
    if ctx.kind == ModelKind::Ensemble {
        bundle.spec.kind = ModelKind::Ce;
    }
    match ctx.cfg.selection {
        Selection::Last => Ok(None),
        Selection::Accuracy if ctx.kind.is_classifier() => {
            Ok(Some(bundle.accuracy(val.x, val.labels, Exec::Sequential)?))
        }
        Selection::Accuracy => Ok(None),
        Selection::OodAucPr => {
            let ood = val.ood.expect("checked in train");
            let name = crate::eval::default_scores(bundle.kind())[0];
            let report = crate::eval::detection_auc(&bundle, val.x, ood, name, Exec::Sequential)?;
            Ok(Some(report))
        }
    }
}

fn train_network(
    ctx: &Context<'_>,
    member: usize,
    net: &mut Network,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<StepRecord>, Vec<EvalRecord>, usize)> {
    let cfg = ctx.cfg;
    let mut opt_cfg = cfg.optimizer.clone();
    if matches!(ctx.kind, ModelKind::Ce | ModelKind::Oe | ModelKind::Ensemble | ModelKind::McDropout) {
        opt_cfg.weight_decay = cfg.classifier_weight_decay;
    }
    let mut state = AdamState::new(opt_cfg, &net.parameters());
    let mut sampler = if ctx.kind.uses_sampler() {
        let base = match cfg.base_sampler {
            BaseKind::UniformBox => BaseSampler::bounding_box(ctx.x, cfg.box_margin)?,
            BaseKind::StandardNormal => BaseSampler::StandardNormal { dim: ctx.x.cols() },
        };
        Some(Sampler { buffer: ReplayBuffer::new(cfg.buffer_capacity, cfg.reinit_prob, base, rng)? })
    } else {
        None
    };
    let mut records = Vec::new();
    let mut evals = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let n = cfg.batch_size.min(ctx.x.rows()).max(1);
    for step in 1..=cfg.steps {
        let (xb, yb) = sample_batch(ctx.x, ctx.labels, n, rng);
        let mut g = Graph::new();
        let p = net.bind(&mut g, true);
        let lr = state.next_lr();
        let so = step_loss(ctx, &mut g, &p, net, &xb, &yb, sampler.as_mut(), rng).map_err(|e| diverged(step, e))?;
        let loss = g.scalar(so.parts.total);
        if !loss.is_finite() {
            return Err(Error::Divergence { step, reason: format!("loss is {loss}") });
        }
        let value = |v: Option<Var>| v.map(|v| g.scalar(v));
        let record = StepRecord {
            member,
            step,
            lr,
            loss,
            density: value(so.parts.density),
            classification: value(so.parts.classification),
            regularizer: value(so.parts.regularizer),
            grad_norm: 0.0,
            energy_pos: so.energy_pos,
            energy_neg: so.energy_neg,
        };
        let mut grads = g.backward(so.parts.total)?;
        let params = net.parameters();
        let grads: Vec<Tensor> = p.iter().zip(&params).map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))).collect();
        let grad_norm = grads.iter().map(|t| t.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        adam_step(&mut net.parameters_mut(), &grads, &mut state).map_err(|e| diverged(step, e))?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps) {
            records.push(StepRecord { grad_norm, ..record });
        }
        let at_eval = step == cfg.steps || (cfg.eval_every > 0 && step % cfg.eval_every == 0);
        if at_eval {
            if let Some(metric) = validation_metric(ctx, net)? {
                evals.push(EvalRecord { member, step, metric });
                if best.as_ref().is_none_or(|b| metric > b.0) {
                    best = Some((metric, step, net.clone()));
                }
            }
        }
    }
    let selected = match best {
        Some((_, step, snapshot)) => {
            *net = snapshot;
            step
        }
        None => cfg.steps,
    };
    Ok((records, evals, selected))
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(reason) => Error::Divergence { step, reason },
        Error::Divergence { reason, .. } => Error::Divergence { step, reason },
        other => other,
    }
}

fn train_flow(bundle: &mut ModelBundle, x: &Tensor, cfg: &TrainConfig, seed: u64) -> Result<TrainSummary> {
    let mut rng = job_rng(seed, 0);
    let flow = bundle.flow_mut().ok_or_else(|| invalid("flow bundle without a flow"))?;
    let mut state = AdamState::new(cfg.optimizer.clone(), &flow.parameters());
    let mut summary = TrainSummary::default();
    let n = cfg.batch_size.min(x.rows());
    for step in 1..=cfg.steps {
        let (xb, _) = sample_batch(x, &[], n, &mut rng);
        let mut g = Graph::new();
        let p = crate::nn::bind(&mut g, &flow.parameters(), true);
        let lr = state.next_lr();
        let loss = flow_nll_loss(&mut g, &p, flow, &xb)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Divergence { step, reason: format!("flow NLL is {value}") });
        }
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor> = p
            .iter()
            .zip(flow.parameters())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect();
        let grad_norm = grads.iter().map(|t| t.data().iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
        adam_step(&mut flow.parameters_mut(), &grads, &mut state).map_err(|e| diverged(step, e))?;
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps) {
            summary.records.push(StepRecord {
                member: 0,
                step,
                lr,
                loss: value,
                density: Some(value),
                classification: None,
                regularizer: None,
                grad_norm,
                energy_pos: None,
                energy_neg: None,
            });
        }
    }
    summary.selected_steps.push(cfg.steps);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelSpec};
    use rand::SeedableRng;

    fn blobs(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.0, 2.0], [1.732, -1.0], [-1.732, -1.0]];
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 3;
            for j in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(centers[c][j] + 0.2 * z);
            }
            labels.push(c);
        }
        (Tensor::matrix(n, 2, data).unwrap(), labels)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            steps: 60,
            batch_size: 32,
            optimizer: AdamConfig { lr: 1e-2, warmup_steps: 0, ..AdamConfig::default() },
            sgld: SgldConfig { steps: 5, ..SgldConfig::default() },
            buffer_capacity: 200,
            log_every: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn every_kind_trains_deterministically() {
        let (x, y) = blobs(150, 0);
        for kind in ModelKind::ALL {
            let spec = ModelSpec { hidden: vec![16, 16], ensemble_size: 2, flow_depth: 2, flow_hidden: 8, mc_passes: 4, ..ModelSpec::new(kind) };
            let run = |exec| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                let mut b = build_model(&spec, 2, 3, &mut rng).unwrap();
                let labels: &[usize] = if kind.is_classifier() { &y } else { &[] };
                let s = train(&mut b, &x, labels, None, &quick(), 7, exec).unwrap();
                (b, s)
            };
            let (a, sa) = run(Exec::Sequential);
            let (b, sb) = run(Exec::Parallel);
            assert_eq!(a, b, "{kind}");
            assert_eq!(sa, sb, "{kind}");
            assert!(!sa.records.is_empty());
        }
    }

    #[test]
    fn ce_learns_separable_blobs() {
        let (x, y) = blobs(300, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = build_model(&ModelSpec { hidden: vec![32, 32], ..ModelSpec::new(ModelKind::Ce) }, 2, 3, &mut rng).unwrap();
        let cfg = TrainConfig { steps: 200, ..quick() };
        train(&mut b, &x, &y, None, &cfg, 0, Exec::Sequential).unwrap();
        assert!(b.accuracy(&x, &y, Exec::Sequential).unwrap() > 0.97);
    }

    #[test]
    fn selection_keeps_best_snapshot() {
        let (x, y) = blobs(150, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = build_model(&ModelSpec { hidden: vec![16], ..ModelSpec::new(ModelKind::Ce) }, 2, 3, &mut rng).unwrap();
        let cfg = TrainConfig { eval_every: 20, ..quick() };
        let val = Validation { x: &x, labels: &y, ood: None };
        let s = train(&mut b, &x, &y, Some(val), &cfg, 0, Exec::Sequential).unwrap();
        let best = s.evals.iter().map(|e| e.metric).fold(f64::MIN, f64::max);
        assert_eq!(b.accuracy(&x, &y, Exec::Sequential).unwrap(), best);
        assert_eq!(s.evals.len(), 3);
    }

    #[test]
    fn bad_labels_rejected() {
        let (x, _) = blobs(30, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = build_model(&ModelSpec { hidden: vec![4], ..ModelSpec::new(ModelKind::Ce) }, 2, 3, &mut rng).unwrap();
        assert!(train(&mut b, &x, &vec![5; 30], None, &quick(), 0, Exec::Sequential).is_err());
    }
}
