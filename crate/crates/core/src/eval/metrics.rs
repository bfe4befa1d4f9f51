use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

fn check_pair(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("detection score".into()));
    }
    let p = labels.iter().filter(|&&l| l).count() as u64;
    let n = labels.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(invalid("AUC-PR needs both positive and negative labels"));
    }
    Ok((p, n))
}

#[inline]
fn ap_term(tp: u64, fp: u64, delta_tp: u64, positives: u64) -> f64 {
    let precision = tp as f64 / (tp + fp) as f64;
    precision * (delta_tp as f64 / positives as f64)
}

/// Average precision with positives labelled `true`: a descending sweep
/// over score thresholds where equal scores enter together, summing
/// `precision · Δrecall` at each threshold that adds positives.
pub fn auc_pr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (positives, _) = check_pair(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap) = (0u64, 0u64, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let before = tp;
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if tp > before {
            ap += ap_term(tp, fp, tp - before, positives);
        }
    }
    Ok(ap)
}

/// Quadratic-time reference for [`auc_pr`]: counts true and false positives
/// afresh at every distinct threshold.
pub fn auc_pr_brute_force(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (positives, _) = check_pair(scores, labels)?;
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut ap, mut prev_tp) = (0.0, 0u64);
    for t in thresholds {
        let mut tp = 0u64;
        let mut fp = 0u64;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        if tp > prev_tp {
            ap += ap_term(tp, fp, tp - prev_tp, positives);
        }
        prev_tp = tp;
    }
    Ok(ap)
}

/// One confidence bin. Statistics are `None` for empty bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: Option<f64>,
    pub accuracy: Option<f64>,
}

pub const DEFAULT_BINS: usize = 15;

/// Equal-width bins over `[0, 1]`; a confidence of exactly 1 lands in the last bin.
pub fn calibration_curve(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<Vec<CalibrationBin>> {
    if confidences.is_empty() {
        return Err(invalid("calibration of an empty set"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::Shape(format!("{} confidences for {} outcomes", confidences.len(), correct.len())));
    }
    if n_bins == 0 {
        return Err(invalid("at least one bin is needed"));
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(invalid(format!("confidence {c} outside [0, 1]")));
    }
    let mut count = vec![0usize; n_bins];
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * n_bins as f64).floor() as usize).min(n_bins - 1);
        count[b] += 1;
        conf[b] += c;
        hits[b] += ok as usize;
    }
    Ok((0..n_bins)
        .map(|b| {
            let k = count[b];
            CalibrationBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: k,
                mean_confidence: (k > 0).then(|| conf[b] / k as f64),
                accuracy: (k > 0).then(|| hits[b] as f64 / k as f64),
            }
        })
        .collect())
}

/// `Σ_b (|B_b|/N)·|acc(B_b) − conf(B_b)|` from precomputed bins.
pub fn ece_from_bins(bins: &[CalibrationBin]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    bins.iter()
        .filter_map(|b| match (b.mean_confidence, b.accuracy) {
            (Some(c), Some(a)) => Some(b.count as f64 / n as f64 * (a - c).abs()),
            _ => None,
        })
        .sum()
}

/// Expected calibration error over `n_bins` equal-width bins.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    Ok(ece_from_bins(&calibration_curve(confidences, correct, n_bins)?))
}

/// `true` where the oriented score exceeds `tau`.
pub fn ood_threshold_classifier(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > tau).collect()
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn auc_pr_cases() {
        assert_eq!(auc_pr(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let s = [0.9, 0.2, 0.8];
        let l = [true, false, false];
        assert_eq!(auc_pr(&s, &l).unwrap(), auc_pr_brute_force(&s, &l).unwrap());
        assert_eq!(auc_pr(&s, &l).unwrap(), 1.0);
        let s = [0.2, 0.9, 0.8];
        assert!((auc_pr(&s, &l).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(auc_pr(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc_pr(&[0.1, f64::NAN], &[true, false]).is_err());
    }

    #[test]
    fn ties_form_one_threshold() {
        // All tied: precision is the base rate.
        let l = [true, false, true, false];
        assert_eq!(auc_pr(&[1.0; 4], &l).unwrap(), 0.5);
    }

    #[test]
    fn random_scores_give_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let s: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let l: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let rate = l.iter().filter(|&&x| x).count() as f64 / n as f64;
        assert!((auc_pr(&s, &l).unwrap() - rate).abs() < 0.02);
    }

    #[test]
    fn ece_cases() {
        let conf = vec![0.8; 10];
        let ok: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        assert!((ece(&conf, &ok, 15).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(ece(&[1.0, 1.0], &[true, true], 15).unwrap(), 0.0);
        assert!(ece(&[], &[], 15).is_err());
        assert!(ece(&[1.2], &[true], 15).is_err());
        let bins = calibration_curve(&conf, &ok, 1).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 10);
        assert_eq!(bins[0].accuracy, Some(0.5));
        let bins = calibration_curve(&conf, &ok, 15).unwrap();
        assert_eq!(bins.iter().filter(|b| b.count == 0).count(), 14);
        assert!(bins.iter().filter(|b| b.count == 0).all(|b| b.accuracy.is_none()));
    }

    #[test]
    fn threshold_classifier_cases() {
        let s = [-1.0, 0.0, 2.5];
        assert_eq!(ood_threshold_classifier(&s, f64::NEG_INFINITY), vec![true; 3]);
        assert_eq!(ood_threshold_classifier(&s, f64::INFINITY), vec![false; 3]);
        assert_eq!(ood_threshold_classifier(&s, 0.0), vec![false, false, true]);
    }

    #[test]
    fn mean_std_single_value() {
        assert_eq!(mean_std(&[0.7]), Some((0.7, 0.0)));
        assert_eq!(mean_std(&[]), None);
    }
}
