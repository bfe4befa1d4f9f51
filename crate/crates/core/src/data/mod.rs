//! Synthetic generators, CSV ingestion, splits and standardization.

mod csv_io;
mod generators;

pub use csv_io::{load_csv, write_csv};
pub use generators::{
    gen_constant_ood, gen_noise_ood, gen_noise_ood_labeled, gen_oodomain, gen_three_gaussians, gen_two_moons,
    severity_shift, THREE_GAUSSIAN_MEANS, THREE_GAUSSIAN_SIGMA,
};

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::Tensor;

/// Per-feature affine normalization `(x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Statistics of `x`; constant features get unit scale.
    pub fn fit(x: &Tensor) -> Result<Self> {
        let (n, d) = x.dims2();
        if n == 0 {
            return Err(invalid("cannot standardize an empty set"));
        }
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::Shape(format!("width {} but standardizer has {}", x.cols(), self.mean.len())));
        }
        Ok(())
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.as_matrix();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.as_matrix();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub name: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub feature_names: Vec<String>,
    /// Original label values, indexed by class.
    pub class_names: Vec<String>,
    /// Set when `features` are standardized.
    pub normalization: Option<Standardizer>,
}

impl LabeledDataset {
    pub fn new(name: impl Into<String>, features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let features = features.as_matrix();
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), features.rows())));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= classes) {
            return Err(invalid(format!("label {y} out of range for {classes} classes")));
        }
        let feature_names = (0..features.cols()).map(|j| format!("x{j}")).collect();
        let class_names = (0..classes).map(|c| c.to_string()).collect();
        Ok(Self { name: name.into(), features, labels, classes, feature_names, class_names, normalization: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        }
    }

    /// Applies `st` to the features and records it.
    pub fn standardized(&self, st: &Standardizer) -> Result<Self> {
        if self.normalization.is_some() {
            return Err(invalid(format!("dataset {} is already standardized", self.name)));
        }
        Ok(Self { features: st.apply(&self.features)?, normalization: Some(st.clone()), ..self.clone() })
    }

    /// Features in original units.
    pub fn raw_features(&self) -> Result<Tensor> {
        match &self.normalization {
            Some(st) => st.invert(&self.features),
            None => Ok(self.features.clone()),
        }
    }
}

/// Removes `classes` from `ds`. Returns the remaining data with labels
/// compacted in their original order, and the removed features as OOD.
pub fn holdout_classes(ds: &LabeledDataset, classes: &[usize]) -> Result<(LabeledDataset, Tensor)> {
    if classes.is_empty() {
        return Err(invalid("hold out at least one class"));
    }
    if let Some(c) = classes.iter().find(|&&c| c >= ds.classes) {
        return Err(invalid(format!("class {c} out of range for {} classes", ds.classes)));
    }
    let held: HashSet<usize> = classes.iter().copied().collect();
    if held.len() >= ds.classes {
        return Err(invalid("cannot hold out every class"));
    }
    let mut map = vec![usize::MAX; ds.classes];
    let mut next = 0;
    let mut class_names = Vec::new();
    for c in 0..ds.classes {
        if !held.contains(&c) {
            map[c] = next;
            class_names.push(ds.class_names[c].clone());
            next += 1;
        }
    }
    let (keep, out): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| !held.contains(&ds.labels[i]));
    let mut id = ds.subset(&keep);
    id.labels = id.labels.iter().map(|&y| map[y]).collect();
    id.classes = next;
    id.class_names = class_names;
    id.name = format!("{}-holdout", ds.name);
    Ok((id, ds.features.select_rows(&out)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
}

/// Stratified split: within each class, `round(fraction · count)` rows go
/// to validation and test, the rest to training.
pub fn split<R: Rng + ?Sized>(ds: &LabeledDataset, val_fraction: f64, test_fraction: f64, rng: &mut R) -> Result<Splits> {
    if !(val_fraction >= 0.0 && test_fraction >= 0.0 && val_fraction + test_fraction < 1.0) {
        return Err(invalid(format!("split fractions {val_fraction} + {test_fraction} must be non-negative and sum below 1")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in ds.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for mut idx in by_class {
        idx.shuffle(rng);
        let n = idx.len();
        let nv = (val_fraction * n as f64).round() as usize;
        let nt = ((test_fraction * n as f64).round() as usize).min(n - nv);
        va.extend_from_slice(&idx[..nv]);
        te.extend_from_slice(&idx[nv..nv + nt]);
        tr.extend_from_slice(&idx[nv + nt..]);
    }
    if tr.is_empty() {
        return Err(invalid("split leaves no training rows"));
    }
    for v in [&mut tr, &mut va, &mut te] {
        v.sort_unstable();
    }
    Ok(Splits { train: ds.subset(&tr), val: ds.subset(&va), test: ds.subset(&te) })
}

impl Splits {
    /// Standardizes every split with statistics from the training split.
    pub fn standardize(&self) -> Result<(Self, Standardizer)> {
        let st = Standardizer::fit(&self.train.features)?;
        Ok((
            Self {
                train: self.train.standardized(&st)?,
                val: self.val.standardized(&st)?,
                test: self.test.standardized(&st)?,
            },
            st,
        ))
    }
}

/// Bit-pattern hashes of each row.
pub fn row_hashes(x: &Tensor) -> HashSet<u64> {
    x.iter_rows()
        .map(|r| {
            let mut h = DefaultHasher::new();
            for v in r {
                v.to_bits().hash(&mut h);
            }
            h.finish()
        })
        .collect()
}

/// Whether `a` and `b` share any row.
pub fn shares_rows(a: &Tensor, b: &Tensor) -> bool {
    let ha = row_hashes(a);
    row_hashes(b).iter().any(|h| ha.contains(h))
}
