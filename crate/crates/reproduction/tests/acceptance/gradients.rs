use energy_prior::dirichlet::kl_dirichlet_graph;
use energy_prior::ebm::{
    cd_loss_with_negatives, cnce_loss_with_noise, energy_from_logits, energy_margin_loss, max_entropy_penalty, ssm_loss,
    EnergyFn, EnergyMode,
};
use energy_prior::models::losses::{ce_loss, dpn_loss, epn_entropy_term, epn_loss, jem_loss};
use energy_prior::models::{flow_nll_loss, CouplingFlow, EntropyTarget, LossWeights};
use energy_prior::nn::{bind, Activation, Architecture, FinalLayer, Graph, Network, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const TOL: f64 = 1e-4;

const H: f64 = 1e-5;

fn net(seed: u64, out: usize, final_layer: FinalLayer) -> Network {
    let arch = Architecture {
        activation: Activation::Tanh,
        final_layer,
        ..Architecture::mlp(3, &[5, 4], out)
    };
    Network::new(&arch, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn batch(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn labels(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..c)).collect()
}

fn eval(params: &[Tensor], f: &impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let refs: Vec<&Tensor> = params.iter().collect();
    let p = bind(&mut g, &refs, false);
    let l = f(&mut g, &p);
    g.scalar(l)
}

/// `‖analytic − central difference‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over all
/// parameters. `analytic` may differ from `numeric_f` when the loss detaches
/// part of its own computation; `numeric_f` then freezes that part.
fn rel_error(
    params: &[Tensor],
    analytic: impl Fn(&mut Graph, &[Var]) -> Var,
    numeric_f: impl Fn(&mut Graph, &[Var]) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let refs: Vec<&Tensor> = params.iter().collect();
    let p = bind(&mut g, &refs, true);
    let l = analytic(&mut g, &p);
    let grads = g.backward(l).unwrap();
    let a: Vec<f64> = p.iter().zip(params).flat_map(|(&v, t)| grads.get_or_zeros(v, t).into_data()).collect();
    let mut n = Vec::with_capacity(a.len());
    let mut work = params.to_vec();
    for i in 0..work.len() {
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + H;
            let up = eval(&work, &numeric_f);
            work[i].data_mut()[j] = orig - H;
            let down = eval(&work, &numeric_f);
            work[i].data_mut()[j] = orig;
            n.push((up - down) / (2.0 * H));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(&n).map(|(x, y)| x - y).collect();
    let scale = norm(&a).max(norm(&n));
    assert!(scale > 1e-8, "gradient vanished; the check would be vacuous");
    norm(&diff) / scale
}

fn params_of(n: &Network) -> Vec<Tensor> {
    n.parameters().into_iter().cloned().collect()
}

fn logits(g: &mut Graph, n: &Network, p: &[Var], x: &Tensor) -> Var {
    let xv = g.constant(x.clone());
    n.forward_on(g, p, xv, None)
}

const SEEDS: std::ops::Range<u64> = 0..5;

fn ce_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = net(seed, 3, FinalLayer::Free);
        let (x, y) = (batch(&mut rng, 7, 3, 2.0), labels(&mut rng, 7, 3));
        let f = |g: &mut Graph, p: &[Var]| {
            let l = logits(g, &n, p, &x);
            ce_loss(g, l, &y).unwrap()
        };
        let e = rel_error(&params_of(&n), f, f);
        worst = worst.max(e);
    }
    worst
}

fn dpn_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let n = net(seed, 3, FinalLayer::Free);
        let (x, y, xo) = (batch(&mut rng, 6, 3, 2.0), labels(&mut rng, 6, 3), batch(&mut rng, 5, 3, 4.0));
        let f = |g: &mut Graph, p: &[Var]| {
            let l = logits(g, &n, p, &x);
            let lo = logits(g, &n, p, &xo);
            dpn_loss(g, l, &y, Some(lo), 100.0).unwrap().0
        };
        let e = rel_error(&params_of(&n), f, f);
        worst = worst.max(e);
    }
    worst
}

fn jem_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = net(seed, 3, FinalLayer::Free);
        let (x, y) = (batch(&mut rng, 6, 3, 2.0), labels(&mut rng, 6, 3));
        let (pos, neg) = (batch(&mut rng, 6, 3, 2.0), batch(&mut rng, 6, 3, 3.0));
        let f = |g: &mut Graph, p: &[Var]| jem_loss(g, p, &n, &x, &y, &pos, &neg, 0.7).unwrap().total;
        let e = rel_error(&params_of(&n), f, f);
        worst = worst.max(e);
    }
    worst
}

fn epn_gradients_with_detached_target() -> f64 {
    let mut worst = 0.0f64;
    for (seed, target) in SEEDS.zip([EntropyTarget::Posterior, EntropyTarget::PseudoCounts].into_iter().cycle()) {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let n = net(seed, 3, FinalLayer::NegativeExp);
        let (x, y) = (batch(&mut rng, 6, 3, 2.0), labels(&mut rng, 6, 3));
        let (pos, neg) = (batch(&mut rng, 6, 3, 2.0), batch(&mut rng, 6, 3, 3.0));
        let w = LossWeights { lambda_ent: 0.3, lambda_density: 0.5, lambda_kl: 1.2, entropy_target: target, ..LossWeights::default() };
        // target concentrations from the unperturbed logits: β_y = C + Σ exp f, 1 elsewhere
        let f0 = n.logits(&x).unwrap();
        let beta: Vec<f64> = f0
            .iter_rows()
            .zip(&y)
            .flat_map(|(r, &yi)| {
                let total = 3.0 + r.iter().map(|v| v.exp()).sum::<f64>();
                (0..3).map(move |c| if c == yi { total } else { 1.0 })
            })
            .collect();
        let beta = Tensor::matrix(6, 3, beta).unwrap();
        let analytic = |g: &mut Graph, p: &[Var]| epn_loss(g, p, &n, &x, &y, &pos, &neg, &w).unwrap().total;
        let frozen = |g: &mut Graph, p: &[Var]| {
            let f = logits(g, &n, p, &x);
            let b = g.constant(beta.clone());
            let e = g.exp(f);
            let a = g.offset(e, 1.0);
            let kl = kl_dirichlet_graph(g, b, a);
            let kl = g.mean(kl);
            let kl = g.scale(kl, w.lambda_kl);
            let ent = epn_entropy_term(g, f, target);
            let ent = g.scale(ent, w.lambda_ent);
            let cd = cd_loss_with_negatives(g, p, &EnergyFn::marginal(&n), &pos, &neg).unwrap().loss;
            let cd = g.scale(cd, w.lambda_density);
            let s = g.add(kl, ent);
            g.add(s, cd)
        };
        let params = params_of(&n);
        let (va, vf) = (eval(&params, &analytic), eval(&params, &frozen));
        assert!((va - vf).abs() <= 1e-12 * va.abs().max(1.0), "seed {seed}: value {va} vs {vf}");
        let e = rel_error(&params, analytic, frozen);
        worst = worst.max(e);
    }
    worst
}

fn energy_margin_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = net(seed, 3, FinalLayer::Free);
        let (x, xo) = (batch(&mut rng, 6, 3, 2.0), batch(&mut rng, 6, 3, 4.0));
        // margins placed so both hinges are active
        let f = |g: &mut Graph, p: &[Var]| {
            let l = logits(g, &n, p, &x);
            let lo = logits(g, &n, p, &xo);
            let ei = energy_from_logits(g, l, EnergyMode::Marginal);
            let eo = energy_from_logits(g, lo, EnergyMode::Marginal);
            energy_margin_loss(g, ei, eo, -8.0, 6.0)
        };
        let e = rel_error(&params_of(&n), f, f);
        worst = worst.max(e);
    }
    worst
}

fn cnce_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let n = net(seed, 3, FinalLayer::Free);
        let x = batch(&mut rng, 6, 3, 2.0);
        let y = x.add(&batch(&mut rng, 6, 3, 0.3)).unwrap();
        let e = EnergyFn::marginal(&n);
        let f = |g: &mut Graph, p: &[Var]| cnce_loss_with_noise(g, p, &e, &x, &y).unwrap();
        let err = rel_error(&params_of(&n), f, f);
        worst = worst.max(err);
    }
    worst
}

fn ssm_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let n = net(seed, 1, FinalLayer::Free);
        let x = batch(&mut rng, 5, 3, 1.5);
        let e = EnergyFn::new(&n, EnergyMode::Scalar).unwrap();
        // fixed projection draws so every evaluation sees the same loss
        let f = |g: &mut Graph, p: &[Var]| ssm_loss(g, p, &e, &x, 2, 1e-2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let err = rel_error(&params_of(&n), f, f);
        worst = worst.max(err);
    }
    worst
}

fn flow_nll_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let mut flow = CouplingFlow::new(2, 3, 6, &mut rng).unwrap();
        // move off the identity initialization so every parameter matters
        for t in flow.parameters_mut() {
            for v in t.data_mut() {
                *v += 0.3 * rng.random_range(-1.0..1.0);
            }
        }
        let x = batch(&mut rng, 8, 2, 2.0);
        let params: Vec<Tensor> = flow.parameters().into_iter().cloned().collect();
        let f = |g: &mut Graph, p: &[Var]| flow_nll_loss(g, p, &flow, &x).unwrap();
        let err = rel_error(&params, f, f);
        worst = worst.max(err);
    }
    worst
}

fn max_entropy_penalty_gradients() -> f64 {
    let mut worst = 0.0f64;
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let n = net(seed, 3, FinalLayer::Free);
        let s = batch(&mut rng, 6, 3, 3.0);
        let f = |g: &mut Graph, p: &[Var]| max_entropy_penalty(g, p, &n, &s).unwrap();
        let err = rel_error(&params_of(&n), f, f);
        worst = worst.max(err);
    }
    worst
}

/// Finite-difference check of every loss on five random small networks each.
pub fn run() -> Outcome {
    let checks: [(&str, fn() -> f64); 9] = [
        ("ce", ce_gradients),
        ("dpn", dpn_gradients),
        ("jem", jem_gradients),
        ("epn", epn_gradients_with_detached_target),
        ("energy_margin", energy_margin_gradients),
        ("cnce", cnce_gradients),
        ("ssm", ssm_gradients),
        ("flow_nll", flow_nll_gradients),
        ("max_entropy_penalty", max_entropy_penalty_gradients),
    ];
    let errs: Vec<(&str, f64)> = checks.iter().map(|(n, f)| (*n, f())).collect();
    let (name, worst) = errs.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let bad: Vec<&str> = errs.iter().filter(|e| !(e.1 <= TOL)).map(|e| e.0).collect();
    Outcome::new(bad.is_empty(), format!("worst relative error {worst:.2e} ({name}), tolerance {TOL:e}; failing: {bad:?}"))
}
