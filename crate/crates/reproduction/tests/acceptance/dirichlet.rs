use energy_prior::dirichlet::{
    categorical_entropy, differential_entropy, epn_kl_expanded, epn_target, expected_entropy, kl_dirichlet,
    DirichletParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::Outcome;

const VECTORS: usize = 60;
const SAMPLES: usize = 20_000;

fn draw(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g: Vec<f64> = alpha.iter().map(|&a| Gamma::new(a, 1.0).unwrap().sample(rng)).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn random_alpha(c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..c).map(|_| rng.random_range(0.5..8.0)).collect()
}

/// Sample mean and its standard error.
fn mc(n: usize, mut f: impl FnMut() -> f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..n).map(|_| f()).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Closed forms against Monte Carlo (within 3 standard errors) and the
/// expanded EPN KL against the composed closed form.
pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_z = [0.0f64; 3];
    let mut misses = Vec::new();
    for i in 0..VECTORS {
        let c = rng.random_range(2..=5);
        let p = DirichletParams::new(random_alpha(c, &mut rng)).unwrap();
        let q = DirichletParams::new(random_alpha(c, &mut rng)).unwrap();
        let mut sampler = ChaCha8Rng::seed_from_u64(10_000 + i as u64);
        let checks = [
            (kl_dirichlet(&p, &q).unwrap(), {
                let s = &mut sampler;
                mc(SAMPLES, || {
                    let x = draw(p.alpha(), s);
                    p.log_pdf(&x).unwrap() - q.log_pdf(&x).unwrap()
                })
            }),
            (differential_entropy(&p), mc(SAMPLES, || -p.log_pdf(&draw(p.alpha(), &mut sampler)).unwrap())),
            (expected_entropy(&p), mc(SAMPLES, || categorical_entropy(&draw(p.alpha(), &mut sampler)))),
        ];
        for (k, (exact, (m, se))) in checks.into_iter().enumerate() {
            let z = (exact - m).abs() / se;
            worst_z[k] = worst_z[k].max(z);
            if !(z <= 3.0) {
                misses.push(format!("{}#{i} z={z:.2}", ["kl", "entropy", "expected_entropy"][k]));
            }
        }
    }
    let mut worst_expansion = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(2..=8);
        let f: Vec<f64> = (0..c).map(|_| rng.random_range(-6.0..6.0)).collect();
        let y = rng.random_range(0..c);
        let composed = kl_dirichlet(&epn_target(&f, y).unwrap().params().unwrap(), &DirichletParams::from_logits(&f, 1.0).unwrap()).unwrap();
        let expanded = epn_kl_expanded(&f, y).unwrap();
        worst_expansion = worst_expansion.max((composed - expanded).abs() / composed.abs().max(1.0));
    }
    let pass = misses.is_empty() && worst_expansion <= 1e-9;
    Outcome::new(
        pass,
        format!(
            "{VECTORS} vectors x {SAMPLES} samples, worst |z| kl {:.2} entropy {:.2} expected_entropy {:.2} (limit 3); expansion rel diff {worst_expansion:.1e} (limit 1e-9){}",
            worst_z[0],
            worst_z[1],
            worst_z[2],
            if misses.is_empty() { String::new() } else { format!("; misses {misses:?}") }
        ),
    )
}
