use energy_prior::dirichlet::DirichletParams;
use energy_prior::ebm::{marginal_energy, sgld_sample, EnergyFn, EnergyModel, SgldConfig};
use energy_prior::eval::dirichlet_from_logits;
use energy_prior::models::{build_model, ModelKind, ModelSpec};
use energy_prior::nn::{Architecture, FinalLayer, Graph, Network, Tensor, Var};
use energy_prior::par::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Outcome;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect::<Vec<f64>>()).unwrap()
}

/// α₀ of the posterior Dirichlet equals `C + exp(−E)`, both on raw logit
/// vectors and through a model's own energy and Dirichlet outputs.
pub fn joint_view() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(2..=10);
        let f: Vec<f64> = (0..c).map(|_| rng.random_range(-8.0..8.0)).collect();
        let a0 = DirichletParams::from_logits(&f, 1.0).unwrap().precision();
        worst = worst.max(rel(a0, c as f64 + (-marginal_energy(&f).unwrap()).exp()));
    }
    let bundle = build_model(&ModelSpec { hidden: vec![16, 16], ..ModelSpec::new(ModelKind::EpnM) }, 2, 3, &mut rng).unwrap();
    let x = gaussian(&mut rng, 1000, 2, 5.0);
    let logits = bundle.logits(&x).unwrap();
    let energies = bundle.energies(&x, Exec::Sequential).unwrap();
    let mut worst_model = 0.0f64;
    for (row, e) in logits.iter_rows().zip(energies) {
        let a0 = dirichlet_from_logits(ModelKind::EpnM, row).unwrap().precision();
        worst_model = worst_model.max(rel(a0, 3.0 + (-e).exp()));
    }
    Outcome::new(
        worst <= 1e-10 && worst_model <= 1e-10,
        format!("worst relative gap {worst:.1e} on 1000 logit vectors, {worst_model:.1e} on 1000 model outputs (limit 1e-10)"),
    )
}

/// Energy of random negative-final-layer ReLU networks along random rays.
pub fn rays() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fails = Vec::new();
    let mut min_gap = f64::INFINITY;
    for k in 0..50 {
        let d = [2, 3, 5][k % 3];
        let arch = Architecture { final_layer: FinalLayer::NegativeExp, ..Architecture::mlp(d, &[16, 16], 3) };
        let net = Network::new(&arch, &mut rng).unwrap();
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rows: Vec<f64> = [1.0, 10.0, 100.0, 1000.0].iter().flat_map(|b| x.iter().map(move |v| b * v)).collect();
        let e = EnergyFn::marginal(&net).energies(&Tensor::matrix(4, d, rows).unwrap()).unwrap();
        // p̃(1000x) / p̃(x) = exp(E(x) − E(1000x))
        let log_ratio = e[0] - e[3];
        min_gap = min_gap.min(e[3] - e[0]);
        if !(e[2] > e[1]) || !(log_ratio < 1e-6f64.ln()) {
            fails.push(k);
        }
    }
    Outcome::new(
        fails.is_empty(),
        format!("50 networks: E(100x) > E(10x) and p̃(1000x) < 1e-6 p̃(x) fail for {fails:?}; smallest E(1000x) - E(x) = {min_gap:.1} (needs > {:.1})", 1e6f64.ln()),
    )
}

struct Quadratic;

impl EnergyModel for Quadratic {
    fn input_dim(&self) -> usize {
        2
    }

    fn parameters(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn energy_on(&self, g: &mut Graph, _: &[Var], x: Var) -> Var {
        let sq = g.square(x);
        let s = g.row_sum(sq);
        g.scale(s, 0.5)
    }
}

fn moments(samples: &[&[f64]], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| samples.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let var = (0..d).map(|j| samples.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)).collect();
    (mean, var)
}

/// 512 chains on `‖x‖²/2` with α = 0.1 for K = 5000 steps. Moments are
/// estimated from the chain states every 100 steps after the first 1000.
pub fn sgld() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut x = Tensor::matrix(512, 2, (0..1024).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let cfg = SgldConfig { step_size: 0.1, steps: 100, ..SgldConfig::default() };
    let mut kept: Vec<Tensor> = Vec::new();
    for block in 0..50 {
        x = sgld_sample(&Quadratic, &x, &cfg, &mut rng, Exec::default()).unwrap();
        if block >= 10 {
            kept.push(x.clone());
        }
    }
    let rows: Vec<&[f64]> = kept.iter().flat_map(|t| t.iter_rows()).collect();
    let (mean, var) = moments(&rows, 2);
    let (fmean, fvar) = moments(&x.iter_rows().collect::<Vec<_>>(), 2);
    let pass = mean.iter().all(|m| m.abs() < 0.05) && var.iter().all(|v| (v - 1.0).abs() <= 0.1);
    Outcome::new(
        pass,
        format!(
            "mean [{:.4}, {:.4}] (limit 0.05), variance [{:.4}, {:.4}] (limit 1 ± 0.1); final states alone: mean [{:.3}, {:.3}], variance [{:.3}, {:.3}]",
            mean[0], mean[1], var[0], var[1], fmean[0], fmean[1], fvar[0], fvar[1]
        ),
    )
}
