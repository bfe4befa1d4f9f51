use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use energy_prior::eval::{score, ScoreName};
use energy_prior::models::ModelBundle;
use energy_prior::nn::{Checkpoint, Tensor};
use energy_prior::par::Exec;
use epn_cli::commands::{cmd_train, run_eval, Ctx, RunReport};
use epn_cli::config::ExperimentConfig;

use crate::Outcome;

pub struct ToyRun {
    pub report: RunReport,
    pub bundles: Vec<ModelBundle>,
    pub seconds: f64,
}

impl ToyRun {
    fn auc(&self, ood: &str, score: ScoreName) -> f64 {
        self.report
            .aggregate
            .iter()
            .find(|a| a.metric == "auc_pr" && a.ood_set == ood && a.score == score.name())
            .unwrap_or_else(|| panic!("no {ood}/{score} row"))
            .mean
    }

    fn accuracies(&self) -> Vec<f64> {
        self.report.per_seed.iter().map(|m| m.accuracy.unwrap()).collect()
    }

    fn mean_accuracy(&self) -> f64 {
        let a = self.accuracies();
        a.iter().sum::<f64>() / a.len() as f64
    }
}

/// Trains and evaluates a shipped config through the CLI pipeline.
fn toy(name: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> ToyRun {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    edit(&mut cfg);
    let dir = tempfile::tempdir().unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    let ctx = Ctx::new(cfg, Exec::default()).unwrap();
    let t0 = Instant::now();
    cmd_train(&ctx).unwrap();
    let report = run_eval(&ctx).unwrap();
    let seconds = t0.elapsed().as_secs_f64();
    let bundles = ctx
        .cfg
        .seeds
        .iter()
        .map(|&s| ModelBundle::from_checkpoint(&Checkpoint::load(&ctx.checkpoint_path(s)).unwrap()).unwrap())
        .collect();
    ToyRun { report, bundles, seconds }
}

fn ce() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| toy("toy_ce", |_| {}))
}

fn epn() -> &'static ToyRun {
    static RUN: OnceLock<ToyRun> = OnceLock::new();
    RUN.get_or_init(|| toy("toy_epn", |_| {}))
}

fn msp(b: &ModelBundle, x: &Tensor) -> Vec<f64> {
    score(b, x, ScoreName::Msp, Exec::default()).unwrap()
}

fn ring(radius: f64, n: usize) -> Tensor {
    let pts = (0..n)
        .flat_map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [radius * a.cos(), radius * a.sin()]
        })
        .collect();
    Tensor::matrix(n, 2, pts).unwrap()
}

fn fmt(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", "))
}

pub fn decision_surfaces() -> Outcome {
    let (ce, epn) = (ce(), epn());
    let corners = Tensor::matrix(4, 2, vec![-10.0, -10.0, 10.0, -10.0, -10.0, 10.0, 10.0, 10.0]).unwrap();
    let corner_min: Vec<f64> = ce.bundles.iter().map(|b| msp(b, &corners).into_iter().fold(1.0, f64::min)).collect();
    let circle = ring(10.0, 360);
    let ring_msp: Vec<f64> = epn.bundles.iter().map(|b| msp(b, &circle).iter().sum::<f64>() / 360.0).collect();
    let seconds = ce.seconds + epn.seconds;
    let pass = ce.accuracies().iter().all(|&a| a >= 0.99)
        && corner_min.iter().all(|&c| c >= 0.9)
        && epn.accuracies().iter().all(|&a| a >= 0.95)
        && ring_msp.iter().all(|&m| m <= 0.40)
        && seconds < 600.0;
    Outcome::new(
        pass,
        format!(
            "CE accuracy {} corner confidence {}; EPN-M accuracy {} radius-10 MSP {}; {seconds:.0}s for 5+5 seeds",
            fmt(&ce.accuracies()),
            fmt(&corner_min),
            fmt(&epn.accuracies()),
            fmt(&ring_msp)
        ),
    )
}

pub fn ood_detection() -> Outcome {
    let (ce, epn) = (ce(), epn());
    let s = ScoreName::UnnormDensity;
    let (noise, constant, oodomain) = (epn.auc("noise", s), epn.auc("constant", s), epn.auc("oodomain", s));
    let ce_oodomain = ce.auc("oodomain", ScoreName::Msp);
    let pass = noise >= 0.99 && constant >= 0.99 && oodomain > ce_oodomain && epn.seconds < 1800.0;
    Outcome::new(
        pass,
        format!(
            "EPN-M {s} mean AUC-PR noise {noise:.4} (need 0.99), constant {constant:.4} (need 0.99), oodomain {oodomain:.4} vs CE msp {ce_oodomain:.4}; EPN {:.0}s",
            epn.seconds
        ),
    )
}

pub fn ablations() -> Outcome {
    let full = epn();
    let no_density = toy("toy_epn", |c| c.model.weights.lambda_density = 0.0);
    let no_kl = toy("toy_epn", |c| c.model.weights.lambda_kl = 0.0);
    let s = ScoreName::UnnormDensity;
    let drop = full.auc("noise", s) - no_density.auc("noise", s);
    let acc = no_kl.mean_accuracy();
    Outcome::new(
        drop >= 0.2 && acc < 0.5,
        format!(
            "noise AUC-PR full {:.4} vs no density {:.4} (drop {drop:.4}, need 0.2); accuracy without KL {acc:.4} per seed {} (need < 0.5)",
            full.auc("noise", s),
            no_density.auc("noise", s),
            fmt(&no_kl.accuracies())
        ),
    )
}
