use std::collections::HashSet;
use std::path::{Path, PathBuf};

use energy_prior::eval::{AttackKind, AttackNorm, ScoreName};
use energy_prior::models::{ModelSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    ThreeGaussians,
    ThreeGaussiansOverlap,
    TwoMoons,
    Csv,
}

fn default_scale() -> f64 {
    255.0
}

/// One OOD evaluation set. Generated sets default to the test-set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSpec {
    Noise {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    },
    Constant {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    },
    /// Test rows in original units times `scale`.
    Oodomain {
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// Removes these classes from training; their rows become OOD.
    HoldoutClasses { classes: Vec<usize> },
    /// Test rows with Gaussian noise of std `0.05·level`.
    SeverityShift { level: u32 },
}

impl OodSpec {
    pub fn name(&self) -> String {
        match self {
            OodSpec::Noise { .. } => "noise".into(),
            OodSpec::Constant { .. } => "constant".into(),
            OodSpec::Oodomain { .. } => "oodomain".into(),
            OodSpec::HoldoutClasses { .. } => "holdout".into(),
            OodSpec::SeverityShift { level } => format!("severity_{level}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Seed for generation, splitting and OOD sets; independent of the model seeds.
    pub seed: u64,
    pub n_per_class: usize,
    /// Two-moons sample count.
    pub n_samples: usize,
    pub moon_noise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub label_column: String,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Defaults to true for CSV input and false for generated data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize: Option<bool>,
    pub ood: Vec<OodSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::ThreeGaussians,
            seed: 0,
            n_per_class: 1500,
            n_samples: 1000,
            moon_noise: 0.1,
            path: None,
            label_column: "label".into(),
            val_fraction: 0.1,
            test_fraction: 0.2,
            standardize: None,
            ood: vec![OodSpec::Noise { n: None }, OodSpec::Constant { n: None }, OodSpec::Oodomain { scale: 255.0 }],
        }
    }
}

impl DataConfig {
    pub fn standardize(&self) -> bool {
        self.standardize.unwrap_or(self.source == DataSource::Csv)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ece_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ece_bins: energy_prior::eval::DEFAULT_BINS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RayConfig {
    /// Random unit directions per seed.
    pub directions: usize,
    pub betas: Vec<f64>,
}

impl Default for RayConfig {
    fn default() -> Self {
        Self { directions: 16, betas: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// `[x1_min, x1_max, x2_min, x2_max]`.
    pub bounds: [f64; 4],
    /// Points per axis.
    pub resolution: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { bounds: [-10.0, 10.0, -10.0, 10.0], resolution: 101 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub norm: AttackNorm,
    pub eps: Vec<f64>,
    /// PGD iterations.
    pub steps: usize,
    /// PGD step size as a fraction of `eps`.
    pub step_fraction: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { kind: AttackKind::Pgd, norm: AttackNorm::Linf, eps: vec![0.0, 0.1, 0.25, 0.5, 1.0], steps: 40, step_fraction: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    /// Hidden widths of the scalar EBM.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], train: TrainConfig { steps: 2000, ..TrainConfig::default() } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Empty selects the model kind's default scores.
    pub scores: Vec<ScoreName>,
    pub data: DataConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ray: RayConfig,
    pub grid: GridConfig,
    pub attack: AttackConfig,
    pub embed: EmbedConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            output_dir: PathBuf::from("runs/experiment"),
            seeds: vec![0, 1, 2, 3, 4],
            scores: Vec::new(),
            data: DataConfig::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ray: RayConfig::default(),
            grid: GridConfig::default(),
            attack: AttackConfig::default(),
            embed: EmbedConfig::default(),
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| bad(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Scores to report: the configured list or the kind's defaults.
    pub fn score_names(&self) -> Vec<ScoreName> {
        if self.scores.is_empty() {
            energy_prior::eval::default_scores(self.model.kind).to_vec()
        } else {
            self.scores.clone()
        }
    }

    /// SHA-256 of the canonical JSON form with the output directory blanked,
    /// first 16 hex digits.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes to JSON");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(bad("seeds must not be empty"));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(bad("seeds must be distinct"));
        }
        self.model.validate().map_err(|e| bad(format!("model: {e}")))?;
        self.train.validate().map_err(|e| bad(format!("train: {e}")))?;
        self.embed.train.validate().map_err(|e| bad(format!("embed.train: {e}")))?;
        for s in &self.scores {
            if !s.supported_by(self.model.kind) {
                return Err(bad(format!("score {s} is not available for model kind {}", self.model.kind)));
            }
        }
        let d = &self.data;
        if !(d.val_fraction >= 0.0 && d.test_fraction > 0.0 && d.val_fraction + d.test_fraction < 1.0) {
            return Err(bad("data fractions must satisfy 0 ≤ val, 0 < test, val + test < 1"));
        }
        match d.source {
            DataSource::Csv => match &d.path {
                None => return Err(bad("data.path is required for CSV input")),
                Some(p) if !p.is_file() => return Err(bad(format!("data file {} does not exist", p.display()))),
                Some(_) => {}
            },
            DataSource::TwoMoons if d.n_samples < 2 => return Err(bad("data.n_samples must be at least 2")),
            _ if d.n_per_class == 0 => return Err(bad("data.n_per_class must be positive")),
            _ => {}
        }
        let names: Vec<String> = d.ood.iter().map(OodSpec::name).collect();
        if names.iter().collect::<HashSet<_>>().len() != names.len() {
            return Err(bad("OOD set names must be distinct"));
        }
        for o in &d.ood {
            match o {
                OodSpec::Oodomain { scale } if !(*scale >= 1.0 && scale.is_finite()) => {
                    return Err(bad(format!("oodomain scale {scale} must be at least 1")))
                }
                OodSpec::SeverityShift { level } if *level > 5 => return Err(bad("severity level must be 0..=5")),
                OodSpec::HoldoutClasses { classes } if classes.is_empty() => {
                    return Err(bad("holdout_classes needs at least one class"))
                }
                OodSpec::Noise { n: Some(0) } | OodSpec::Constant { n: Some(0) } => {
                    return Err(bad("generated OOD sets need at least one row"))
                }
                _ => {}
            }
        }
        if self.eval.ece_bins == 0 {
            return Err(bad("eval.ece_bins must be positive"));
        }
        if self.ray.directions == 0 || self.ray.betas.is_empty() {
            return Err(bad("ray needs at least one direction and one scale"));
        }
        if self.ray.betas.iter().any(|&b| !(b > 0.0 && b.is_finite())) || self.ray.betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("ray.betas must be positive and strictly ascending"));
        }
        let [a, b, c, e] = self.grid.bounds;
        if !(a < b && c < e && [a, b, c, e].iter().all(|v| v.is_finite())) || self.grid.resolution == 0 {
            return Err(bad("grid needs finite increasing bounds and positive resolution"));
        }
        if self.attack.eps.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(bad("attack.eps values must be finite and non-negative"));
        }
        if self.attack.steps == 0 || !(self.attack.step_fraction > 0.0) {
            return Err(bad("attack.steps and attack.step_fraction must be positive"));
        }
        if self.embed.hidden.contains(&0) {
            return Err(bad("embed.hidden widths must be positive"));
        }
        Ok(())
    }
}
