use anyhow::{bail, Result};
use energy_prior::data::{
    gen_constant_ood, gen_noise_ood, gen_oodomain, gen_three_gaussians, gen_two_moons, holdout_classes, load_csv,
    severity_shift, split, LabeledDataset, Splits, Standardizer,
};
use energy_prior::models::job_rng;
use energy_prior::nn::Tensor;
use rand::seq::SliceRandom;

use crate::config::{DataConfig, DataSource, OodSpec};

/// Splits in model-input units plus named OOD sets.
pub struct Prepared {
    pub splits: Splits,
    pub ood: Vec<(String, Tensor)>,
    /// OOD rows for model selection: a tenth of the held-out classes, or noise.
    pub val_ood: Tensor,
    pub standardizer: Option<Standardizer>,
}

impl Prepared {
    pub fn classes(&self) -> usize {
        self.splits.train.classes
    }

    pub fn dim(&self) -> usize {
        self.splits.train.dim()
    }
}

const STREAM_DATA: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_VAL_OOD: u64 = 2;
const STREAM_OOD: u64 = 16;

fn load(cfg: &DataConfig) -> Result<LabeledDataset> {
    let mut rng = job_rng(cfg.seed, STREAM_DATA);
    Ok(match cfg.source {
        DataSource::ThreeGaussians => gen_three_gaussians(cfg.n_per_class, false, &mut rng)?,
        DataSource::ThreeGaussiansOverlap => gen_three_gaussians(cfg.n_per_class, true, &mut rng)?,
        DataSource::TwoMoons => gen_two_moons(cfg.n_samples, cfg.moon_noise, &mut rng)?,
        DataSource::Csv => {
            let path = cfg.path.as_ref().expect("validated");
            load_csv(path, &cfg.label_column)?
        }
    })
}

/// Deterministic in `cfg` alone.
pub fn prepare(cfg: &DataConfig) -> Result<Prepared> {
    let mut ds = load(cfg)?;
    let holdout: Vec<&Vec<usize>> = cfg
        .ood
        .iter()
        .filter_map(|o| if let OodSpec::HoldoutClasses { classes } = o { Some(classes) } else { None })
        .collect();
    if holdout.len() > 1 {
        bail!(crate::error::CliError::Validation("at most one holdout_classes set".into()));
    }
    let mut held_raw = None;
    if let Some(classes) = holdout.first() {
        let (id, held) = holdout_classes(&ds, classes)?;
        ds = id;
        held_raw = Some(held);
    }
    let splits = split(&ds, cfg.val_fraction, cfg.test_fraction, &mut job_rng(cfg.seed, STREAM_SPLIT))?;
    if splits.test.is_empty() {
        bail!(crate::error::CliError::Validation("test split is empty".into()));
    }
    let (splits, standardizer) = if cfg.standardize() {
        let (s, st) = splits.standardize()?;
        (s, Some(st))
    } else {
        (splits, None)
    };
    let to_input = |raw: &Tensor| -> Result<Tensor> {
        Ok(match &standardizer {
            Some(st) => st.apply(raw)?,
            None => raw.clone(),
        })
    };
    let n_test = splits.test.len();
    let dim = splits.test.dim();
    let mut val_ood = None;
    let mut ood = Vec::new();
    for (i, spec) in cfg.ood.iter().enumerate() {
        let mut rng = job_rng(cfg.seed, STREAM_OOD + i as u64);
        let x = match spec {
            OodSpec::Noise { n } => gen_noise_ood(n.unwrap_or(n_test), dim, &mut rng)?,
            OodSpec::Constant { n } => gen_constant_ood(n.unwrap_or(n_test), dim, &mut rng)?,
            OodSpec::Oodomain { scale } => to_input(&gen_oodomain(&splits.test.raw_features()?, *scale)?)?,
            OodSpec::SeverityShift { level } => severity_shift(&splits.test.features, *level, &mut rng)?,
            OodSpec::HoldoutClasses { .. } => {
                let held = to_input(held_raw.as_ref().expect("held out above"))?;
                let mut idx: Vec<usize> = (0..held.rows()).collect();
                idx.shuffle(&mut rng);
                let n_val = (0.1 * idx.len() as f64).round() as usize;
                let (v, t) = idx.split_at(n_val);
                if !v.is_empty() {
                    val_ood = Some(held.select_rows(v));
                }
                held.select_rows(t)
            }
        };
        ood.push((spec.name(), x));
    }
    let val_ood = match val_ood {
        Some(v) => v,
        None => gen_noise_ood(splits.val.len().max(1), dim, &mut job_rng(cfg.seed, STREAM_VAL_OOD))?,
    };
    Ok(Prepared { splits, ood, val_ood, standardizer })
}
