use energy_prior::data::gen_two_moons;
use energy_prior::models::{build_model, train, CouplingFlow, ModelKind, ModelSpec, TrainConfig};
use energy_prior::nn::Tensor;
use energy_prior::par::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

fn round_trip_error(flow: &CouplingFlow, x: &Tensor) -> f64 {
    let (z, _) = flow.to_latent(x).unwrap();
    let back = flow.to_data(&z).unwrap();
    back.data().iter().zip(x.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

/// Midpoint rule over `[lo, hi]²`.
fn integral(flow: &CouplingFlow, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let pts: Vec<f64> =
        (0..n * n).flat_map(|k| [lo + h * ((k % n) as f64 + 0.5), lo + h * ((k / n) as f64 + 0.5)]).collect();
    let lp = flow.log_prob(&Tensor::matrix(n * n, 2, pts).unwrap()).unwrap();
    lp.iter().map(|l| l.exp()).sum::<f64>() * h * h
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut random = CouplingFlow::new(2, 6, 16, &mut rng).unwrap();
    for t in random.parameters_mut() {
        for v in t.data_mut() {
            *v += 0.5 * rng.random_range(-1.0..1.0);
        }
    }
    let x = Tensor::matrix(2000, 2, (0..4000).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
    let random_err = round_trip_error(&random, &x);

    let moons = gen_two_moons(2000, 0.1, &mut rng).unwrap();
    let spec = ModelSpec { flow_depth: 8, flow_hidden: 32, ..ModelSpec::new(ModelKind::CouplingFlow) };
    let mut bundle = build_model(&spec, 2, 2, &mut rng).unwrap();
    let mut cfg = TrainConfig { steps: 3000, batch_size: 128, ..TrainConfig::default() };
    cfg.optimizer.warmup_steps = 200;
    train(&mut bundle, &moons.features, &moons.labels, None, &cfg, 11, Exec::default()).unwrap();
    let flow = bundle.flow().unwrap();
    let trained_err = round_trip_error(flow, &moons.features);
    let mass = integral(flow, -8.0, 8.0, 800);
    Outcome::new(
        random_err <= 1e-8 && trained_err <= 1e-8 && (mass - 1.0).abs() <= 0.02,
        format!("round trip max error {random_err:.1e} random, {trained_err:.1e} trained (limit 1e-8); density mass on [-8,8]^2 = {mass:.4} (limit 1 ± 0.02)"),
    )
}
