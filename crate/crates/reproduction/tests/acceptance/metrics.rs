use energy_prior::eval::{auc_pr, auc_pr_brute_force, ece};
use energy_prior::models::{nll, predictive_probs, temperature_fit, PredictiveForm};
use energy_prior::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

/// Mean over positives of the precision at that positive's score.
fn per_positive_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|p| *p.1).map(|p| *p.0).collect();
    let sum: f64 = pos
        .iter()
        .map(|&s| {
            let above = scores.iter().filter(|&&t| t >= s).count() as f64;
            let hits = pos.iter().filter(|&&t| t >= s).count() as f64;
            hits / above
        })
        .sum();
    sum / pos.len() as f64
}

pub fn auc_pr_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut exact, mut worst_oracle, mut instances) = (0, 0.0f64, 0);
    while instances < 200 {
        let n = rng.random_range(2..=200);
        let tied = instances % 2 == 0;
        let levels = rng.random_range(2..=10);
        let scores: Vec<f64> =
            (0..n).map(|_| if tied { rng.random_range(0..levels) as f64 } else { rng.random::<f64>() }).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if labels.iter().all(|&l| l) || !labels.iter().any(|&l| l) {
            continue;
        }
        instances += 1;
        let fast = auc_pr(&scores, &labels).unwrap();
        if fast == auc_pr_brute_force(&scores, &labels).unwrap() {
            exact += 1;
        }
        worst_oracle = worst_oracle.max((fast - per_positive_precision(&scores, &labels)).abs());
    }
    Outcome::new(
        exact == 200 && worst_oracle < 1e-12,
        format!("{exact}/200 bit-identical to the quadratic sweep (half with ties); max gap to per-positive precision oracle {worst_oracle:.1e}"),
    )
}

fn sample(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// Logits `scale · z` with labels drawn from `softmax(z)`.
fn overconfident(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
    let mut data = Vec::with_capacity(3 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        labels.push(sample(&predictive_probs(&z, PredictiveForm::Softmax, 1.0).unwrap(), rng));
        data.extend(z.iter().map(|v| v * scale));
    }
    (Tensor::matrix(n, 3, data).unwrap(), labels)
}

fn ece_at(logits: &Tensor, labels: &[usize], t: f64) -> f64 {
    let (conf, ok): (Vec<f64>, Vec<bool>) = logits
        .iter_rows()
        .zip(labels)
        .map(|(r, &y)| {
            let p = predictive_probs(r, PredictiveForm::Softmax, t).unwrap();
            let arg = (0..p.len()).fold(0, |b, k| if p[k] > p[b] { k } else { b });
            (p[arg], arg == y)
        })
        .unzip();
    ece(&conf, &ok, 15).unwrap()
}

pub fn calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut increases = 0;
    for i in 0..100 {
        let form = if i % 2 == 0 { PredictiveForm::Softmax } else { PredictiveForm::Epn };
        let n = rng.random_range(5..200);
        let scale = rng.random_range(0.05..20.0);
        let logits = Tensor::matrix(n, 4, (0..4 * n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let fit = temperature_fit(&logits, &labels, form).unwrap();
        if nll(&logits, &labels, form, fit.temperature).unwrap() > nll(&logits, &labels, form, 1.0).unwrap() {
            increases += 1;
        }
    }
    let (val, val_y) = overconfident(3000, 4.0, &mut rng);
    let (test, test_y) = overconfident(5000, 4.0, &mut rng);
    let fit = temperature_fit(&val, &val_y, PredictiveForm::Softmax).unwrap();
    let (before, after) = (ece_at(&test, &test_y, 1.0), ece_at(&test, &test_y, fit.temperature));
    let reduction = 1.0 - after / before;
    Outcome::new(
        increases == 0 && reduction >= 0.5,
        format!(
            "validation NLL increased in {increases}/100 random fits; overconfident model: T = {:.3}, ECE {before:.4} -> {after:.4} ({:.0}% lower, need 50%)",
            fit.temperature,
            100.0 * reduction
        ),
    )
}
