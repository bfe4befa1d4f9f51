use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::auc_pr;
use crate::dirichlet::{categorical_entropy, DirichletParams};
use crate::error::{invalid, Error, Result};
use crate::models::{ModelBundle, ModelKind};
use crate::nn::Tensor;
use crate::par::{row_chunks, Exec};

/// OOD scores. Every score is oriented so that higher means more in-distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreName {
    /// Maximum class probability.
    Msp,
    /// Negated entropy of the predictive distribution.
    PredEntropy,
    /// Negated differential entropy of the predicted Dirichlet.
    DiffEntropy,
    /// Negated energy.
    Energy,
    /// `exp(−E)`.
    UnnormDensity,
    /// Negated mutual information of the predicted Dirichlet.
    MutualInfo,
    /// Negated sum of per-class predictive variances.
    EnsembleVariance,
    /// Flow log-density.
    FlowLogp,
}

impl ScoreName {
    pub const ALL: [ScoreName; 8] = [
        ScoreName::Msp,
        ScoreName::PredEntropy,
        ScoreName::DiffEntropy,
        ScoreName::Energy,
        ScoreName::UnnormDensity,
        ScoreName::MutualInfo,
        ScoreName::EnsembleVariance,
        ScoreName::FlowLogp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreName::Msp => "msp",
            ScoreName::PredEntropy => "pred_entropy",
            ScoreName::DiffEntropy => "diff_entropy",
            ScoreName::Energy => "energy",
            ScoreName::UnnormDensity => "unnorm_density",
            ScoreName::MutualInfo => "mutual_info",
            ScoreName::EnsembleVariance => "ensemble_variance",
            ScoreName::FlowLogp => "flow_logp",
        }
    }

    /// Whether the raw quantity was negated to make higher mean more in-distribution.
    pub fn negated(self) -> bool {
        matches!(
            self,
            ScoreName::PredEntropy
                | ScoreName::DiffEntropy
                | ScoreName::Energy
                | ScoreName::MutualInfo
                | ScoreName::EnsembleVariance
        )
    }

    pub fn supported_by(self, kind: ModelKind) -> bool {
        use ModelKind as K;
        match self {
            ScoreName::Msp | ScoreName::PredEntropy => kind.is_classifier(),
            ScoreName::Energy | ScoreName::UnnormDensity => kind.is_classifier() || kind == K::ScalarEbm,
            ScoreName::DiffEntropy | ScoreName::MutualInfo => matches!(kind, K::Dpn | K::EpnM),
            ScoreName::EnsembleVariance => matches!(kind, K::Ensemble | K::McDropout),
            ScoreName::FlowLogp => kind == K::CouplingFlow,
        }
    }
}

impl fmt::Display for ScoreName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreName::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown score `{s}`")))
    }
}

/// Scores reported for a kind when none are requested.
pub fn default_scores(kind: ModelKind) -> &'static [ScoreName] {
    use ModelKind as K;
    match kind {
        K::Ce | K::Oe => &[ScoreName::Msp],
        K::EnergyOod | K::ScalarEbm => &[ScoreName::Energy],
        K::Jem => &[ScoreName::UnnormDensity],
        K::Dpn => &[ScoreName::DiffEntropy],
        K::Ensemble | K::McDropout => &[ScoreName::EnsembleVariance],
        K::EpnM => &[ScoreName::DiffEntropy, ScoreName::UnnormDensity],
        K::CouplingFlow => &[ScoreName::FlowLogp],
    }
}

/// Dirichlet concentrations implied by one row of logits.
pub fn dirichlet_from_logits(kind: ModelKind, logits: &[f64]) -> Result<DirichletParams> {
    let alpha = match kind {
        ModelKind::Dpn => logits.iter().map(|f| f.exp().max(f64::MIN_POSITIVE)).collect(),
        ModelKind::EpnM => logits.iter().map(|f| 1.0 + f.exp()).collect(),
        k => return Err(Error::Unsupported(format!("{k} does not predict a Dirichlet"))),
    };
    DirichletParams::new(alpha)
}

const SCORE_CHUNK: usize = 512;

fn score_block(bundle: &ModelBundle, x: &Tensor, name: ScoreName) -> Result<Vec<f64>> {
    let exec = Exec::Sequential;
    match name {
        ScoreName::Msp => {
            let p = bundle.predict_proba(x, exec)?;
            Ok(p.iter_rows().map(|r| r.iter().cloned().fold(f64::MIN, f64::max)).collect())
        }
        ScoreName::PredEntropy => {
            let p = bundle.predict_proba(x, exec)?;
            Ok(p.iter_rows().map(|r| -categorical_entropy(r)).collect())
        }
        ScoreName::Energy => Ok(bundle.energies(x, exec)?.into_iter().map(|e| -e).collect()),
        ScoreName::UnnormDensity => Ok(bundle.energies(x, exec)?.into_iter().map(|e| (-e).exp()).collect()),
        ScoreName::DiffEntropy | ScoreName::MutualInfo => {
            let l = bundle.logits(x)?;
            l.iter_rows()
                .map(|r| {
                    let d = dirichlet_from_logits(bundle.kind(), r)?;
                    Ok(if name == ScoreName::DiffEntropy {
                        -d.differential_entropy()
                    } else {
                        -d.mutual_information()
                    })
                })
                .collect()
        }
        ScoreName::EnsembleVariance => {
            let (_, var) = bundle.predictive_spread(x, exec)?;
            Ok(var.iter_rows().map(|r| -r.iter().sum::<f64>()).collect())
        }
        ScoreName::FlowLogp => bundle.flow().expect("flow kind").log_prob(x),
    }
}

/// Oriented scores per row of `x`.
pub fn score(bundle: &ModelBundle, x: &Tensor, name: ScoreName, exec: Exec) -> Result<Vec<f64>> {
    if !name.supported_by(bundle.kind()) {
        return Err(Error::Unsupported(format!("score {name} for model kind {}", bundle.kind())));
    }
    if x.cols() != bundle.input_dim() {
        return Err(Error::Shape(format!("input width {} but model expects {}", x.cols(), bundle.input_dim())));
    }
    let chunks = row_chunks(x.rows(), SCORE_CHUNK);
    let parts = exec.map(&chunks, |&(s, t)| score_block(bundle, &x.slice_rows(s, t), name));
    let mut out = Vec::with_capacity(x.rows());
    for p in parts {
        out.extend(p?);
    }
    if let Some(v) = out.iter().find(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("score {name} produced {v}")));
    }
    Ok(out)
}

/// AUC-PR of `score` with the in-distribution rows as positives.
pub fn detection_auc(bundle: &ModelBundle, id: &Tensor, ood: &Tensor, name: ScoreName, exec: Exec) -> Result<f64> {
    let mut s = score(bundle, id, name, exec)?;
    s.extend(score(bundle, ood, name, exec)?);
    let labels: Vec<bool> = (0..id.rows() + ood.rows()).map(|i| i < id.rows()).collect();
    auc_pr(&s, &labels)
}

/// One row of an OOD detection table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub seed: u64,
    pub ood_set: String,
    pub score: ScoreName,
    pub auc_pr: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub rows: Vec<DetectionRow>,
}

impl DetectionReport {
    /// Scores `id` against each named OOD set under every score in `names`.
    pub fn evaluate(
        bundle: &ModelBundle,
        seed: u64,
        id: &Tensor,
        ood_sets: &[(String, Tensor)],
        names: &[ScoreName],
        exec: Exec,
    ) -> Result<Self> {
        let mut rows = Vec::new();
        for name in names {
            let id_scores = score(bundle, id, *name, exec)?;
            for (set, ood) in ood_sets {
                let mut s = id_scores.clone();
                s.extend(score(bundle, ood, *name, exec)?);
                let labels: Vec<bool> = (0..s.len()).map(|i| i < id.rows()).collect();
                rows.push(DetectionRow {
                    seed,
                    ood_set: set.clone(),
                    score: *name,
                    auc_pr: auc_pr(&s, &labels)?,
                    n_id: id.rows(),
                    n_ood: ood.rows(),
                });
            }
        }
        Ok(Self { rows })
    }
}
