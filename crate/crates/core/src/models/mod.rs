//! Model zoo: classifiers, Dirichlet networks, energy models, ensembles and
//! a coupling flow, bundled with their losses and prediction rules.

pub mod calibration;
pub mod flow;
pub mod losses;
pub mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use calibration::{nll, predictive_probs, temperature_fit, PredictiveForm, TemperatureFit};
pub use flow::{flow_nll_loss, CouplingFlow, CouplingLayer, S_MAX};
pub use losses::{
    ce_loss, dpn_loss, dpn_target, energy_ood_loss, epn_entropy_term, epn_kl_term, epn_loss, jem_loss, oe_loss,
    LossParts,
};
pub use train::{train, BaseKind, EbmObjective, EvalRecord, Selection, StepRecord, TrainConfig, TrainSummary, Validation};

use crate::ebm::{energy_from_logits, EnergyMode};
use crate::error::{invalid, Error, Result};
use crate::nn::{softmax_rows, Activation, Architecture, Checkpoint, FinalLayer, Graph, Network, Tensor, Var};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ce,
    Dpn,
    Jem,
    #[default]
    EpnM,
    EnergyOod,
    Oe,
    Ensemble,
    McDropout,
    CouplingFlow,
    /// Single-output network read as `E = −output`.
    ScalarEbm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 10] = [
        ModelKind::Ce,
        ModelKind::Dpn,
        ModelKind::Jem,
        ModelKind::EpnM,
        ModelKind::EnergyOod,
        ModelKind::Oe,
        ModelKind::Ensemble,
        ModelKind::McDropout,
        ModelKind::CouplingFlow,
        ModelKind::ScalarEbm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ce => "ce",
            ModelKind::Dpn => "dpn",
            ModelKind::Jem => "jem",
            ModelKind::EpnM => "epn_m",
            ModelKind::EnergyOod => "energy_ood",
            ModelKind::Oe => "oe",
            ModelKind::Ensemble => "ensemble",
            ModelKind::McDropout => "mc_dropout",
            ModelKind::CouplingFlow => "coupling_flow",
            ModelKind::ScalarEbm => "scalar_ebm",
        }
    }

    /// Produces class predictions.
    pub fn is_classifier(self) -> bool {
        !matches!(self, ModelKind::CouplingFlow | ModelKind::ScalarEbm)
    }

    /// Trains with Langevin negatives from a replay buffer.
    pub fn uses_sampler(self) -> bool {
        matches!(self, ModelKind::Jem | ModelKind::EpnM | ModelKind::ScalarEbm)
    }

    /// Trains against auxiliary outlier samples.
    pub fn uses_aux_ood(self) -> bool {
        matches!(self, ModelKind::Dpn | ModelKind::Oe | ModelKind::EnergyOod)
    }

    pub fn predictive_form(self) -> PredictiveForm {
        if self == ModelKind::EpnM {
            PredictiveForm::Epn
        } else {
            PredictiveForm::Softmax
        }
    }

    fn default_final_layer(self) -> FinalLayer {
        if self == ModelKind::EpnM {
            FinalLayer::NegativeExp
        } else {
            FinalLayer::Free
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown model kind `{s}`")))
    }
}

/// Dirichlet whose differential entropy the EPN regularizer raises.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyTarget {
    /// `Dir(1 + exp f)`; bounded penalty.
    #[default]
    Posterior,
    /// `Dir(exp f)`; unbounded as pseudo-counts vanish.
    PseudoCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Cross-entropy weight in JEM.
    pub gamma: f64,
    pub lambda_kl: f64,
    pub lambda_ent: f64,
    pub entropy_target: EntropyTarget,
    pub lambda_margin: f64,
    pub lambda_oe: f64,
    pub dpn_beta_y: f64,
    /// Weight on the density term of EPN; 0 removes it.
    pub lambda_density: f64,
    pub m_in: f64,
    pub m_out: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda_kl: 1.0,
            lambda_ent: 1e-4,
            entropy_target: EntropyTarget::Posterior,
            lambda_margin: 0.1,
            lambda_oe: 0.5,
            dpn_beta_y: 100.0,
            lambda_density: 1.0,
            m_in: -23.0,
            m_out: -5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            ("gamma", self.gamma),
            ("lambda_kl", self.lambda_kl),
            ("lambda_ent", self.lambda_ent),
            ("lambda_margin", self.lambda_margin),
            ("lambda_oe", self.lambda_oe),
            ("dpn_beta_y", self.dpn_beta_y),
            ("lambda_density", self.lambda_density),
        ];
        for (name, v) in w {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(format!("loss weight {name} = {v} must be finite and non-negative")));
            }
        }
        if !(self.m_in.is_finite() && self.m_out.is_finite()) {
            return Err(invalid("energy margins must be finite"));
        }
        Ok(())
    }
}

/// Architecture recipe and loss weights for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Defaults to negative-exponential for `epn_m`, free otherwise.
    pub final_layer: Option<FinalLayer>,
    /// Defaults to 0.3 for `mc_dropout`, 0 otherwise.
    pub dropout: Option<f64>,
    pub ensemble_size: usize,
    pub mc_passes: usize,
    pub mc_seed: u64,
    pub flow_depth: usize,
    pub flow_hidden: usize,
    pub weights: LossWeights,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::EpnM,
            hidden: vec![100; 5],
            activation: Activation::Relu,
            final_layer: None,
            dropout: None,
            ensemble_size: 5,
            mc_passes: 100,
            mc_seed: 0,
            flow_depth: 8,
            flow_hidden: 64,
            weights: LossWeights::default(),
        }
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn final_layer(&self) -> FinalLayer {
        self.final_layer.unwrap_or(self.kind.default_final_layer())
    }

    pub fn dropout(&self) -> f64 {
        self.dropout.unwrap_or(if self.kind == ModelKind::McDropout { 0.3 } else { 0.0 })
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let d = self.dropout();
        if !(0.0..1.0).contains(&d) {
            return Err(invalid(format!("dropout rate {d} outside [0, 1)")));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        match self.kind {
            ModelKind::Ensemble if self.ensemble_size == 0 => Err(invalid("ensemble_size must be at least 1")),
            ModelKind::McDropout if self.mc_passes == 0 => Err(invalid("mc_passes must be at least 1")),
            ModelKind::CouplingFlow if self.flow_depth == 0 || self.flow_hidden == 0 => {
                Err(invalid("flow depth and width must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn architecture(&self, input_dim: usize, output_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.hidden.clone(),
            output_dim,
            activation: self.activation,
            final_layer: self.final_layer(),
            dropout: self.dropout(),
        }
    }
}

/// A trained or trainable model: its networks plus what is needed to
/// turn them into predictions and scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    spec: ModelSpec,
    input_dim: usize,
    classes: usize,
    members: Vec<Network>,
    flow: Option<CouplingFlow>,
    temperature: f64,
}

/// Builds a freshly initialized model for `input_dim` features and `classes` classes.
pub fn build_model<R: Rng + ?Sized>(spec: &ModelSpec, input_dim: usize, classes: usize, rng: &mut R) -> Result<ModelBundle> {
    spec.validate()?;
    if input_dim == 0 {
        return Err(invalid("input dimension must be positive"));
    }
    let kind = spec.kind;
    if kind.is_classifier() && classes < 2 {
        return Err(invalid(format!("{kind} needs at least 2 classes, got {classes}")));
    }
    let mut members = Vec::new();
    let mut flow = None;
    match kind {
        ModelKind::CouplingFlow => flow = Some(CouplingFlow::new(input_dim, spec.flow_depth, spec.flow_hidden, rng)?),
        ModelKind::ScalarEbm => members.push(Network::new(&spec.architecture(input_dim, 1), rng)?),
        ModelKind::Ensemble => {
            for _ in 0..spec.ensemble_size {
                members.push(Network::new(&spec.architecture(input_dim, classes), rng)?);
            }
        }
        _ => members.push(Network::new(&spec.architecture(input_dim, classes), rng)?),
    }
    Ok(ModelBundle { spec: spec.clone(), input_dim, classes, members, flow, temperature: 1.0 })
}

impl ModelBundle {
    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn members(&self) -> &[Network] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [Network] {
        &mut self.members
    }

    pub fn flow(&self) -> Option<&CouplingFlow> {
        self.flow.as_ref()
    }

    pub fn flow_mut(&mut self) -> Option<&mut CouplingFlow> {
        self.flow.as_mut()
    }

    /// The single network of non-ensemble kinds.
    pub fn network(&self) -> Result<&Network> {
        match (self.kind(), self.members.as_slice()) {
            (ModelKind::Ensemble | ModelKind::CouplingFlow, _) | (_, []) => {
                Err(Error::Unsupported(format!("{} has no single network", self.kind())))
            }
            (_, [net, ..]) => Ok(net),
        }
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(format!("temperature {t} must be positive")));
        }
        self.temperature = t;
        Ok(())
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!("input width {} but model expects {}", x.cols(), self.input_dim)));
        }
        Ok(())
    }

    fn require_classifier(&self) -> Result<()> {
        if !self.kind().is_classifier() {
            return Err(Error::Unsupported(format!("{} does not predict classes", self.kind())));
        }
        Ok(())
    }

    /// Inference logits of the single network, or the mean member logits of an ensemble.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        if self.kind() == ModelKind::CouplingFlow {
            return Err(Error::Unsupported("a flow has no logits".into()));
        }
        if self.kind() == ModelKind::Ensemble {
            let all = self.member_logits(x, Exec::Sequential)?;
            let mut mean = Tensor::zeros(vec![x.rows(), self.classes]);
            for l in &all {
                mean = mean.add(l)?;
            }
            return Ok(mean.scale(1.0 / all.len() as f64));
        }
        self.network()?.logits(x)
    }

    pub fn member_logits(&self, x: &Tensor, exec: Exec) -> Result<Vec<Tensor>> {
        self.check(x)?;
        exec.map(&self.members, |m| m.logits(x)).into_iter().collect()
    }

    /// Class probabilities at the stored temperature.
    pub fn predict_proba(&self, x: &Tensor, exec: Exec) -> Result<Tensor> {
        self.require_classifier()?;
        self.check(x)?;
        let t = self.temperature;
        match self.kind() {
            ModelKind::Ensemble => {
                let members: Vec<Tensor> = self.member_logits(x, exec)?.iter().map(|l| l.scale(1.0 / t)).collect();
                Ok(mean_and_variance(&members)?.0)
            }
            ModelKind::McDropout => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.spec.mc_seed);
                let net = self.network()?;
                let (mean, _) = mc_dropout_predict_scaled(net, x, self.spec.mc_passes, t, &mut rng, exec)?;
                Ok(mean)
            }
            kind => {
                let l = self.network()?.logits(x)?;
                probs_from_logits(&l, kind.predictive_form(), t)
            }
        }
    }

    /// `(mean probabilities, per-class variance)` for the kinds that sample predictions.
    pub fn predictive_spread(&self, x: &Tensor, exec: Exec) -> Result<(Tensor, Tensor)> {
        self.check(x)?;
        match self.kind() {
            ModelKind::Ensemble => ensemble_predict(&self.members, x, exec),
            ModelKind::McDropout => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.spec.mc_seed);
                mc_dropout_predict(self.network()?, x, self.spec.mc_passes, &mut rng, exec)
            }
            k => Err(Error::Unsupported(format!("{k} has no predictive spread"))),
        }
    }

    /// Predicted class per row.
    pub fn predict(&self, x: &Tensor, exec: Exec) -> Result<Vec<usize>> {
        let p = self.predict_proba(x, exec)?;
        Ok(p.iter_rows().map(argmax).collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize], exec: Exec) -> Result<f64> {
        if labels.len() != x.rows() || labels.is_empty() {
            return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), x.rows())));
        }
        let pred = self.predict(x, exec)?;
        Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
    }

    /// Energy per row: marginal energy of the logits for classifiers (the
    /// member mean for ensembles), `−output` for a scalar EBM.
    pub fn energies(&self, x: &Tensor, exec: Exec) -> Result<Vec<f64>> {
        self.check(x)?;
        match self.kind() {
            ModelKind::CouplingFlow => Err(Error::Unsupported("a flow has no energy".into())),
            ModelKind::ScalarEbm => Ok(self.network()?.logits(x)?.data().iter().map(|o| -o).collect()),
            _ => {
                let all = self.member_logits(x, exec)?;
                let mut out = vec![0.0; x.rows()];
                for l in &all {
                    for (o, row) in out.iter_mut().zip(l.iter_rows()) {
                        *o += crate::ebm::marginal_energy(row)?;
                    }
                }
                let m = all.len() as f64;
                Ok(out.into_iter().map(|e| e / m).collect())
            }
        }
    }

    /// Records per-row predictive log-probabilities (`N×C`) with parameters
    /// held constant, for input-gradient attacks.
    pub fn predictive_log_probs_on(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.require_classifier()?;
        let t = 1.0 / self.temperature;
        let member = |g: &mut Graph, net: &Network| {
            let p = net.bind(g, false);
            let f = net.forward_on(g, &p, x, None);
            g.scale(f, t)
        };
        match self.kind() {
            ModelKind::Ensemble => {
                let m = self.members.len();
                let mut acc: Option<Var> = None;
                for net in &self.members {
                    let f = member(g, net);
                    let ls = g.row_log_softmax(f);
                    let p = g.exp(ls);
                    acc = Some(match acc {
                        Some(a) => g.add(a, p),
                        None => p,
                    });
                }
                let mean = g.scale(acc.expect("ensemble has members"), 1.0 / m as f64);
                Ok(g.log(mean))
            }
            ModelKind::EpnM => {
                let f = member(g, self.network()?);
                let sp = g.softplus(f);
                Ok(g.row_log_softmax(sp))
            }
            _ => {
                let f = member(g, self.network()?);
                Ok(g.row_log_softmax(f))
            }
        }
    }

    /// Marginal (or scalar) energy recorded on `g` for the single network.
    pub fn energy_on(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let net = self.network()?;
        let p = net.bind(g, false);
        let f = net.forward_on(g, &p, x, None);
        let mode = if self.kind() == ModelKind::ScalarEbm { EnergyMode::Scalar } else { EnergyMode::Marginal };
        Ok(energy_from_logits(g, f, mode))
    }

    pub fn parameter_count(&self) -> usize {
        let nets: usize = self.members.iter().map(Network::parameter_count).sum();
        nets + self.flow.as_ref().map_or(0, |f| f.parameters().iter().map(|t| t.len()).sum())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = Vec::new();
        let mut members = Vec::new();
        for m in &self.members {
            let (layout, a) = m.to_parts();
            members.push(layout);
            arrays.extend(a);
        }
        let flow = self.flow.as_ref().map(|f| {
            let (meta, a) = f.to_parts();
            arrays.extend(a);
            meta
        });
        let meta = serde_json::json!({
            "kind": self.kind(),
            "spec": self.spec,
            "input_dim": self.input_dim,
            "classes": self.classes,
            "temperature": self.temperature,
            "members": members,
            "flow": flow,
        });
        Checkpoint { meta, arrays }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let meta = &ck.meta;
        let spec: ModelSpec = serde_json::from_value(meta.get("spec").cloned().ok_or_else(|| bad("missing spec"))?)
            .map_err(|e| bad(&e.to_string()))?;
        let input_dim = meta.get("input_dim").and_then(Value::as_u64).ok_or_else(|| bad("missing input_dim"))? as usize;
        let classes = meta.get("classes").and_then(Value::as_u64).ok_or_else(|| bad("missing classes"))? as usize;
        let temperature = meta.get("temperature").and_then(Value::as_f64).ok_or_else(|| bad("missing temperature"))?;
        let layouts = meta.get("members").and_then(Value::as_array).ok_or_else(|| bad("missing members"))?;
        let mut offset = 0;
        let mut members = Vec::with_capacity(layouts.len());
        for layout in layouts {
            let n = 2 * layout.get("activations").and_then(Value::as_array).map_or(0, Vec::len);
            if offset + n > ck.arrays.len() {
                return Err(bad("member arrays truncated"));
            }
            members.push(Network::from_parts(layout, &ck.arrays[offset..offset + n])?);
            offset += n;
        }
        let flow = match meta.get("flow") {
            Some(Value::Null) | None => None,
            Some(fm) => {
                let f = CouplingFlow::from_parts(fm, &ck.arrays[offset..])?;
                offset = ck.arrays.len();
                Some(f)
            }
        };
        if offset != ck.arrays.len() {
            return Err(bad("unused arrays in checkpoint"));
        }
        let bundle = Self { spec, input_dim, classes, members, flow, temperature };
        bundle.spec.validate()?;
        Ok(bundle)
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b })
}

/// Row-wise class probabilities from logits.
pub fn probs_from_logits(logits: &Tensor, form: PredictiveForm, t: f64) -> Result<Tensor> {
    let (n, c) = logits.dims2();
    let mut out = Vec::with_capacity(n * c);
    for row in logits.iter_rows() {
        out.extend(predictive_probs(row, form, t)?);
    }
    Tensor::matrix(n, c, out)
}

fn mean_and_variance(logits: &[Tensor]) -> Result<(Tensor, Tensor)> {
    let Some(first) = logits.first() else {
        return Err(invalid("empty ensemble"));
    };
    let probs: Vec<Tensor> = logits.iter().map(softmax_rows).collect::<Result<_>>()?;
    let m = probs.len() as f64;
    let (n, c) = first.dims2();
    let mut mean = vec![0.0; n * c];
    for p in &probs {
        for (a, b) in mean.iter_mut().zip(p.data()) {
            *a += b / m;
        }
    }
    let mut var = vec![0.0; n * c];
    for p in &probs {
        for ((v, b), mu) in var.iter_mut().zip(p.data()).zip(&mean) {
            *v += (b - mu) * (b - mu) / m;
        }
    }
    Ok((Tensor::matrix(n, c, mean)?, Tensor::matrix(n, c, var)?))
}

/// Mean member softmax and its per-class (population) variance across members.
pub fn ensemble_predict(members: &[Network], x: &Tensor, exec: Exec) -> Result<(Tensor, Tensor)> {
    if members.is_empty() {
        return Err(invalid("empty ensemble"));
    }
    let logits: Vec<Tensor> = exec.map(members, |m| m.logits(x)).into_iter().collect::<Result<_>>()?;
    mean_and_variance(&logits)
}

/// Monte-Carlo mean and per-class variance of softmax outputs over
/// `passes` forward passes with dropout active.
pub fn mc_dropout_predict<R: Rng + ?Sized>(
    net: &Network,
    x: &Tensor,
    passes: usize,
    rng: &mut R,
    exec: Exec,
) -> Result<(Tensor, Tensor)> {
    mc_dropout_predict_scaled(net, x, passes, 1.0, rng, exec)
}

fn mc_dropout_predict_scaled<R: Rng + ?Sized>(
    net: &Network,
    x: &Tensor,
    passes: usize,
    t: f64,
    rng: &mut R,
    exec: Exec,
) -> Result<(Tensor, Tensor)> {
    if passes == 0 {
        return Err(invalid("at least one forward pass is needed"));
    }
    let base = rng.next_u64();
    let logits: Vec<Tensor> = exec
        .map_range(passes, |p| {
            let mut r = ChaCha8Rng::seed_from_u64(base);
            r.set_stream(p as u64);
            net.forward(x, true, &mut r).map(|l| l.scale(1.0 / t))
        })
        .into_iter()
        .collect::<Result<_>>()?;
    mean_and_variance(&logits)
}

/// Derives an independent generator for job `index` under a master seed.
pub fn job_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

/// Pulls fresh seed material from `rng` for a child generator.
pub fn child_rng(rng: &mut dyn RngCore) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rng.next_u64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn linear(w: Vec<f64>, c: usize) -> Network {
        let d = w.len() / c;
        let layer = Layer {
            weight: Tensor::matrix(d, c, w).unwrap(),
            bias: Tensor::zeros(vec![1, c]),
            activation: Activation::None,
        };
        Network::from_layers(vec![layer], FinalLayer::Free, 0.0).unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("resnet".parse::<ModelKind>().is_err());
    }

    #[test]
    fn ensemble_cases() {
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let a = linear(vec![50.0, -50.0], 2);
        let b = linear(vec![-50.0, 50.0], 2);
        let (mean, var) = ensemble_predict(&[a.clone(), b], &x, Exec::Sequential).unwrap();
        for v in mean.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        for v in var.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let (mean1, var1) = ensemble_predict(&[a.clone()], &x, Exec::Sequential).unwrap();
        assert!(var1.data().iter().all(|&v| v == 0.0));
        let (mean2, var2) = ensemble_predict(&[a.clone(), a.clone()], &x, Exec::Sequential).unwrap();
        assert_eq!(mean1, mean2);
        assert!(var2.data().iter().all(|&v| v.abs() < 1e-30));
        assert!(ensemble_predict(&[], &x, Exec::Sequential).is_err());
    }

    #[test]
    fn mc_dropout_without_dropout_has_no_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::new(&Architecture::mlp(2, &[8], 3), &mut rng).unwrap();
        let x = Tensor::matrix(2, 2, vec![0.1, 0.2, -1.0, 0.5]).unwrap();
        let (_, var) = mc_dropout_predict(&net, &x, 10, &mut rng, Exec::Sequential).unwrap();
        assert!(var.data().iter().all(|&v| v.abs() < 1e-30));
        let mut arch = Architecture::mlp(2, &[8], 3);
        arch.dropout = 0.3;
        let net = Network::new(&arch, &mut rng).unwrap();
        let (_, var) = mc_dropout_predict(&net, &x, 1, &mut rng, Exec::Sequential).unwrap();
        assert!(var.data().iter().all(|&v| v == 0.0));
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let s = mc_dropout_predict(&net, &x, 16, &mut r1, Exec::Sequential).unwrap();
        let p = mc_dropout_predict(&net, &x, 16, &mut r2, Exec::Parallel).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn epn_prediction_depends_on_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bundle = build_model(&ModelSpec { hidden: vec![8], ..ModelSpec::new(ModelKind::EpnM) }, 2, 3, &mut rng).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.4, -0.3]).unwrap();
        let p = bundle.predict_proba(&x, Exec::Sequential).unwrap();
        let f = bundle.logits(&x).unwrap();
        let alpha: Vec<f64> = f.data().iter().map(|v| 1.0 + v.exp()).collect();
        let a0: f64 = alpha.iter().sum();
        for (pi, a) in p.data().iter().zip(&alpha) {
            assert!((pi - a / a0).abs() < 1e-14);
        }
        let soft = softmax_rows(&f).unwrap();
        assert!(soft.data().iter().zip(p.data()).any(|(a, b)| (a - b).abs() > 1e-6));
    }

    #[test]
    fn checkpoint_round_trip_for_every_kind() {
        for kind in ModelKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let spec = ModelSpec { hidden: vec![4, 4], ensemble_size: 2, flow_depth: 2, flow_hidden: 4, ..ModelSpec::new(kind) };
            let mut b = build_model(&spec, 2, 3, &mut rng).unwrap();
            b.set_temperature(1.7).unwrap();
            let bytes = b.to_checkpoint().to_bytes().unwrap();
            let back = ModelBundle::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, b, "{kind}");
        }
    }

    #[test]
    fn log_probs_match_predictions() {
        let x = Tensor::matrix(2, 2, vec![0.3, -0.1, 1.2, 0.8]).unwrap();
        for kind in [ModelKind::Ce, ModelKind::EpnM, ModelKind::Ensemble] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let spec = ModelSpec { hidden: vec![6], ensemble_size: 3, ..ModelSpec::new(kind) };
            let b = build_model(&spec, 2, 3, &mut rng).unwrap();
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let lp = b.predictive_log_probs_on(&mut g, xv).unwrap();
            let p = b.predict_proba(&x, Exec::Sequential).unwrap();
            for (a, q) in g.value(lp).data().iter().zip(p.data()) {
                assert!((a.exp() - q).abs() < 1e-12, "{kind}");
            }
        }
    }
}
