use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use energy_prior::data::{write_csv, Standardizer};
use energy_prior::eval::{
    calibration_curve, detection_auc, ece, fgm_attack, mean_std, pgd_attack, score, AttackKind, CalibrationBin,
    DetectionReport, DetectionRow, ScoreName,
};
use energy_prior::models::{
    build_model, job_rng, temperature_fit, train, ModelBundle, ModelKind, ModelSpec, TrainSummary, Validation,
};
use energy_prior::nn::{Checkpoint, Tensor};
use energy_prior::par::Exec;
use energy_prior::Error as CoreError;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{ensure_dir, fmt_f64, fmt_opt, tagged, write_json, write_json_lines, write_table};
use crate::prepare::{prepare, Prepared};

const STREAM_INIT: u64 = 1;
const STREAM_RAY: u64 = 3;
const STREAM_EMBED: u64 = 5;
const STREAM_RAW: u64 = 6;

/// A validated configuration with its hash, output directory and execution mode.
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub out: PathBuf,
    pub exec: Exec,
}

impl Ctx {
    pub fn new(cfg: ExperimentConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        let out = cfg.output_dir.clone();
        Ok(Self { cfg, hash, out, exec })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out.join(format!("seed-{seed}"))
    }

    pub fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("model.ckpt")
    }

    /// Mode for work inside one seed: sequential when seeds already run in parallel.
    fn inner_exec(&self) -> Exec {
        if self.cfg.seeds.len() > 1 {
            Exec::Sequential
        } else {
            self.exec
        }
    }

    fn per_seed<U: Send>(&self, f: impl Fn(u64, Exec) -> U + Sync + Send) -> Vec<U> {
        let inner = self.inner_exec();
        self.exec.map(&self.cfg.seeds, |&s| f(s, inner))
    }

    fn hash_value(&self) -> Value {
        Value::String(self.hash.clone())
    }
}

fn is_divergence(e: &anyhow::Error) -> bool {
    e.chain().any(|c| matches!(c.downcast_ref::<CoreError>(), Some(CoreError::Divergence { .. } | CoreError::NonFinite(_))))
}

fn write_config(ctx: &Ctx) -> Result<()> {
    ensure_dir(&ctx.out)?;
    std::fs::write(ctx.out.join("config.toml"), ctx.cfg.to_toml()).context("writing config.toml")
}

fn load_bundle(ctx: &Ctx, seed: u64, data: &Prepared) -> Result<Option<ModelBundle>> {
    let path = ctx.checkpoint_path(seed);
    if !path.exists() {
        return Ok(None);
    }
    let b = ModelBundle::from_checkpoint(&Checkpoint::load(&path)?).with_context(|| format!("loading {}", path.display()))?;
    if b.input_dim() != data.dim() {
        return Err(CliError::Validation(format!("{} expects {} features, data has {}", path.display(), b.input_dim(), data.dim())).into());
    }
    if b.kind() != ctx.cfg.model.kind {
        return Err(CliError::Validation(format!("{} holds a {} model, config says {}", path.display(), b.kind(), ctx.cfg.model.kind)).into());
    }
    Ok(Some(b))
}

/// Loads every available checkpoint; fails when none exist.
fn load_all(ctx: &Ctx, data: &Prepared) -> Result<Vec<(u64, ModelBundle)>> {
    let mut out = Vec::new();
    for &s in &ctx.cfg.seeds {
        match load_bundle(ctx, s, data)? {
            Some(b) => out.push((s, b)),
            None => log::warn!("seed {s}: no checkpoint at {}", ctx.checkpoint_path(s).display()),
        }
    }
    if out.is_empty() {
        return Err(CliError::Io(format!("no checkpoints under {}; run `epn train` first", ctx.out.display())).into());
    }
    Ok(out)
}

fn require_classifier(kind: ModelKind, verb: &str) -> Result<()> {
    if !kind.is_classifier() {
        return Err(CliError::Validation(format!("{verb} needs a classifier; {kind} has no class predictions")).into());
    }
    Ok(())
}

fn train_seed(ctx: &Ctx, data: &Prepared, seed: u64, exec: Exec) -> Result<(ModelBundle, TrainSummary)> {
    let t0 = Instant::now();
    let mut bundle = build_model(&ctx.cfg.model, data.dim(), data.classes(), &mut job_rng(seed, STREAM_INIT))?;
    let s = &data.splits;
    let val = (!s.val.is_empty()).then_some(Validation { x: &s.val.features, labels: &s.val.labels, ood: Some(&data.val_ood) });
    let summary = train(&mut bundle, &s.train.features, &s.train.labels, val, &ctx.cfg.train, seed, exec)
        .with_context(|| format!("seed {seed}"))?;
    log::info!("seed {seed}: trained {} in {:.1}s", ctx.cfg.model.kind, t0.elapsed().as_secs_f64());
    Ok((bundle, summary))
}

pub fn cmd_train(ctx: &Ctx) -> Result<()> {
    let data = prepare(&ctx.cfg.data)?;
    write_config(ctx)?;
    let results = ctx.per_seed(|s, exec| train_seed(ctx, &data, s, exec));
    let h = ctx.hash_value();
    let mut rows = Vec::new();
    let mut diverged = 0;
    for (&seed, res) in ctx.cfg.seeds.iter().zip(results) {
        let dir = ctx.seed_dir(seed);
        ensure_dir(&dir)?;
        let ckpt = ctx.checkpoint_path(seed);
        match res {
            Ok((bundle, summary)) => {
                bundle.to_checkpoint().save(&ckpt)?;
                let base = [("config_hash", h.clone()), ("seed", json!(seed))];
                let mut lines = Vec::new();
                for r in &summary.records {
                    lines.push(tagged(&[base[0].clone(), base[1].clone(), ("event", json!("step"))], r));
                }
                for r in &summary.evals {
                    lines.push(tagged(&[base[0].clone(), base[1].clone(), ("event", json!("eval"))], r));
                }
                lines.push(tagged(
                    &[base[0].clone(), base[1].clone(), ("event", json!("selected"))],
                    &json!({ "selected_steps": summary.selected_steps }),
                ));
                write_json_lines(&dir.join("train.jsonl"), &lines)?;
                let last = summary.records.last().map(|r| r.loss);
                let selected = summary.selected_steps.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
                rows.push(vec![
                    ctx.hash.clone(),
                    seed.to_string(),
                    "ok".into(),
                    selected,
                    fmt_opt(last),
                    bundle.parameter_count().to_string(),
                    String::new(),
                ]);
            }
            Err(e) if is_divergence(&e) => {
                log::error!("seed {seed} diverged: {e:#}");
                diverged += 1;
                if ckpt.exists() {
                    std::fs::remove_file(&ckpt)?;
                }
                let line = json!({ "config_hash": h, "seed": seed, "event": "diverged", "message": format!("{e:#}") });
                write_json_lines(&dir.join("train.jsonl"), &[line])?;
                rows.push(vec![ctx.hash.clone(), seed.to_string(), "diverged".into(), String::new(), String::new(), String::new(), format!("{e:#}")]);
            }
            Err(e) => return Err(e),
        }
    }
    write_table(
        &ctx.out.join("train_summary.csv"),
        &["config_hash", "seed", "status", "selected_step", "final_loss", "parameters", "message"],
        &rows,
    )?;
    if diverged > 0 {
        return Err(CliError::Divergence(format!("{diverged} of {} seeds diverged", ctx.cfg.seeds.len())).into());
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub ece: Option<f64>,
    pub detection: Vec<DetectionRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub metric: String,
    pub ood_set: String,
    pub score: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub config_hash: String,
    pub per_seed: Vec<SeedMetrics>,
    pub missing_seeds: Vec<u64>,
    pub aggregate: Vec<AggregateRow>,
}

/// Mean and population std over seeds, keyed in first-seen order.
pub fn aggregate(per_seed: &[SeedMetrics]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    let mut push = |metric: &str, ood: &str, score: &str, vals: Vec<f64>| {
        if let Some((mean, std)) = mean_std(&vals) {
            out.push(AggregateRow { metric: metric.into(), ood_set: ood.into(), score: score.into(), mean, std, n_seeds: vals.len() });
        }
    };
    push("accuracy", "", "", per_seed.iter().filter_map(|m| m.accuracy).collect());
    push("ece", "", "", per_seed.iter().filter_map(|m| m.ece).collect());
    let mut keys: Vec<(String, ScoreName)> = Vec::new();
    for m in per_seed {
        for r in &m.detection {
            if !keys.iter().any(|(o, s)| *o == r.ood_set && *s == r.score) {
                keys.push((r.ood_set.clone(), r.score));
            }
        }
    }
    for (ood, sc) in keys {
        let vals = per_seed
            .iter()
            .flat_map(|m| m.detection.iter().filter(|r| r.ood_set == ood && r.score == sc).map(|r| r.auc_pr))
            .collect();
        push("auc_pr", &ood, sc.name(), vals);
    }
    out
}

fn confidence_and_correct(bundle: &ModelBundle, x: &Tensor, labels: &[usize], exec: Exec) -> Result<(Vec<f64>, Vec<bool>)> {
    let p = bundle.predict_proba(x, exec)?;
    let mut conf = Vec::with_capacity(labels.len());
    let mut correct = Vec::with_capacity(labels.len());
    for (row, &y) in p.iter_rows().zip(labels) {
        let (arg, c) = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        conf.push(c);
        correct.push(arg == y);
    }
    Ok((conf, correct))
}

fn evaluate_seed(ctx: &Ctx, data: &Prepared, seed: u64, bundle: &ModelBundle, exec: Exec) -> Result<SeedMetrics> {
    let test = &data.splits.test;
    let (accuracy, ece_v) = if bundle.kind().is_classifier() {
        let (conf, correct) = confidence_and_correct(bundle, &test.features, &test.labels, exec)?;
        let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
        (Some(acc), Some(ece(&conf, &correct, ctx.cfg.eval.ece_bins)?))
    } else {
        (None, None)
    };
    let report = DetectionReport::evaluate(bundle, seed, &test.features, &data.ood, &ctx.cfg.score_names(), exec)?;
    Ok(SeedMetrics { seed, accuracy, ece: ece_v, detection: report.rows })
}

pub fn run_eval(ctx: &Ctx) -> Result<RunReport> {
    let data = prepare(&ctx.cfg.data)?;
    if data.ood.is_empty() {
        return Err(CliError::Validation("eval-ood needs at least one data.ood set".into()).into());
    }
    let bundles = load_all(ctx, &data)?;
    let inner = if bundles.len() > 1 { Exec::Sequential } else { ctx.exec };
    let per_seed = ctx
        .exec
        .map(&bundles, |(s, b)| evaluate_seed(ctx, &data, *s, b, inner))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let missing = ctx.cfg.seeds.iter().copied().filter(|s| !bundles.iter().any(|(b, _)| b == s)).collect();
    let aggregate = aggregate(&per_seed);
    Ok(RunReport { config_hash: ctx.hash.clone(), per_seed, missing_seeds: missing, aggregate })
}

pub fn cmd_eval_ood(ctx: &Ctx) -> Result<()> {
    let report = run_eval(ctx)?;
    let h = &ctx.hash;
    let mut det = Vec::new();
    let mut met = Vec::new();
    for m in &report.per_seed {
        met.push(vec![h.clone(), m.seed.to_string(), fmt_opt(m.accuracy), fmt_opt(m.ece)]);
        for r in &m.detection {
            det.push(vec![
                h.clone(),
                r.seed.to_string(),
                r.ood_set.clone(),
                r.score.to_string(),
                fmt_f64(r.auc_pr),
                r.n_id.to_string(),
                r.n_ood.to_string(),
            ]);
        }
    }
    let summary: Vec<Vec<String>> = report
        .aggregate
        .iter()
        .map(|a| vec![h.clone(), a.metric.clone(), a.ood_set.clone(), a.score.clone(), fmt_f64(a.mean), fmt_f64(a.std), a.n_seeds.to_string()])
        .collect();
    write_table(&ctx.out.join("eval_ood.csv"), &["config_hash", "seed", "ood_set", "score", "auc_pr", "n_id", "n_ood"], &det)?;
    write_table(&ctx.out.join("eval_metrics.csv"), &["config_hash", "seed", "accuracy", "ece"], &met)?;
    write_table(
        &ctx.out.join("eval_summary.csv"),
        &["config_hash", "metric", "ood_set", "score", "mean", "std", "n_seeds"],
        &summary,
    )?;
    write_json(&ctx.out.join("report.json"), &report)?;
    for a in &report.aggregate {
        println!("{:<9} {:<12} {:<18} {:.4} ± {:.4} (n={})", a.metric, a.ood_set, a.score, a.mean, a.std, a.n_seeds);
    }
    Ok(())
}

/// `increasing`/`decreasing` when energies move strictly monotonically along the ray.
pub fn ray_verdict(energies: &[f64]) -> &'static str {
    if energies.len() < 2 {
        "single"
    } else if energies.windows(2).all(|w| w[1] > w[0]) {
        "increasing"
    } else if energies.windows(2).all(|w| w[1] < w[0]) {
        "decreasing"
    } else {
        "mixed"
    }
}

fn random_directions(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut rng = job_rng(seed, STREAM_RAY);
    (0..n)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

pub fn cmd_diagnose_ray(ctx: &Ctx) -> Result<()> {
    if ctx.cfg.model.kind == ModelKind::CouplingFlow {
        return Err(CliError::Validation("diagnose-ray needs an energy-bearing model; coupling_flow has none".into()).into());
    }
    let data = prepare(&ctx.cfg.data)?;
    let bundles = load_all(ctx, &data)?;
    let betas = &ctx.cfg.ray.betas;
    let mut rows = Vec::new();
    for (seed, b) in &bundles {
        for (k, dir) in random_directions(*seed, ctx.cfg.ray.directions, data.dim()).iter().enumerate() {
            let pts: Vec<f64> = betas.iter().flat_map(|&beta| dir.iter().map(move |v| beta * v)).collect();
            let e = b.energies(&Tensor::matrix(betas.len(), dir.len(), pts)?, ctx.exec)?;
            let verdict = ray_verdict(&e);
            for (beta, en) in betas.iter().zip(&e) {
                rows.push(vec![
                    ctx.hash.clone(),
                    seed.to_string(),
                    k.to_string(),
                    fmt_f64(*beta),
                    fmt_f64(*en),
                    fmt_f64((-en).exp()),
                    verdict.into(),
                ]);
            }
        }
    }
    write_table(&ctx.out.join("ray.csv"), &["config_hash", "seed", "direction", "beta", "energy", "density", "verdict"], &rows)
}

/// Row-major grid (second coordinate outer) with exact endpoints.
pub fn grid_points(bounds: [f64; 4], res: usize) -> Tensor {
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        if res == 1 {
            return vec![lo];
        }
        (0..res).map(|i| if i == res - 1 { hi } else { lo + (hi - lo) * i as f64 / (res - 1) as f64 }).collect()
    };
    let xs = axis(bounds[0], bounds[1]);
    let ys = axis(bounds[2], bounds[3]);
    let data = ys.iter().flat_map(|&y| xs.iter().flat_map(move |&x| [x, y])).collect();
    Tensor::matrix(res * res, 2, data).expect("grid shape")
}

pub fn cmd_grid_density(ctx: &Ctx) -> Result<()> {
    let data = prepare(&ctx.cfg.data)?;
    if data.dim() != 2 {
        return Err(CliError::Validation(format!("grid-density needs 2-D input, data has {} features", data.dim())).into());
    }
    let bundles = load_all(ctx, &data)?;
    let grid = grid_points(ctx.cfg.grid.bounds, ctx.cfg.grid.resolution);
    let mut rows = Vec::new();
    for (seed, b) in &bundles {
        let kind = b.kind();
        let energy = if kind == ModelKind::CouplingFlow {
            score(b, &grid, ScoreName::FlowLogp, ctx.exec)?.into_iter().map(|l| -l).collect()
        } else {
            b.energies(&grid, ctx.exec)?
        };
        let conf = if kind.is_classifier() { Some(score(b, &grid, ScoreName::Msp, ctx.exec)?) } else { None };
        let dent = if ScoreName::DiffEntropy.supported_by(kind) {
            Some(score(b, &grid, ScoreName::DiffEntropy, ctx.exec)?.into_iter().map(|v| -v).collect::<Vec<_>>())
        } else {
            None
        };
        for (i, p) in grid.iter_rows().enumerate() {
            rows.push(vec![
                ctx.hash.clone(),
                seed.to_string(),
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(energy[i]),
                fmt_f64((-energy[i]).exp()),
                fmt_opt(conf.as_ref().map(|c| c[i])),
                fmt_opt(dent.as_ref().map(|d| d[i])),
            ]);
        }
    }
    write_table(
        &ctx.out.join("grid.csv"),
        &["config_hash", "seed", "x1", "x2", "energy", "density", "confidence", "diff_entropy"],
        &rows,
    )
}

pub fn cmd_attack(ctx: &Ctx) -> Result<()> {
    require_classifier(ctx.cfg.model.kind, "attack")?;
    let data = prepare(&ctx.cfg.data)?;
    let bundles = load_all(ctx, &data)?;
    let a = &ctx.cfg.attack;
    let test = &data.splits.test;
    let names = ctx.cfg.score_names();
    let inner = if bundles.len() > 1 { Exec::Sequential } else { ctx.exec };
    let per_seed = ctx.exec.map(&bundles, |(seed, b)| -> Result<Vec<Vec<String>>> {
        let mut rows = Vec::new();
        for &eps in &a.eps {
            let adv = match a.kind {
                AttackKind::Fgm => fgm_attack(b, &test.features, &test.labels, eps, a.norm)?.x,
                AttackKind::Pgd if eps == 0.0 => test.features.clone(),
                AttackKind::Pgd => pgd_attack(b, &test.features, &test.labels, eps, eps * a.step_fraction, a.steps, a.norm)?.x,
            };
            let acc = b.accuracy(&adv, &test.labels, inner)?;
            for &name in &names {
                let auc = detection_auc(b, &test.features, &adv, name, inner)?;
                rows.push(vec![
                    ctx.hash.clone(),
                    seed.to_string(),
                    a.kind.to_string(),
                    a.norm.to_string(),
                    fmt_f64(eps),
                    fmt_f64(acc),
                    name.to_string(),
                    fmt_f64(auc),
                ]);
            }
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    write_table(
        &ctx.out.join("attack.csv"),
        &["config_hash", "seed", "attack", "norm", "eps", "accuracy", "score", "auc_pr"],
        &rows,
    )
}

fn curve_rows(hash: &str, seed: u64, stage: &str, bins: &[CalibrationBin]) -> Vec<Vec<String>> {
    bins.iter()
        .enumerate()
        .map(|(i, b)| {
            vec![
                hash.to_string(),
                seed.to_string(),
                stage.to_string(),
                i.to_string(),
                fmt_f64(b.lower),
                fmt_f64(b.upper),
                b.count.to_string(),
                fmt_opt(b.mean_confidence),
                fmt_opt(b.accuracy),
            ]
        })
        .collect()
}

pub fn cmd_calibrate(ctx: &Ctx) -> Result<()> {
    require_classifier(ctx.cfg.model.kind, "calibrate")?;
    let data = prepare(&ctx.cfg.data)?;
    let (val, test) = (&data.splits.val, &data.splits.test);
    if val.is_empty() {
        return Err(CliError::Validation("calibrate needs a validation split (data.val_fraction > 0)".into()).into());
    }
    let bundles = load_all(ctx, &data)?;
    let bins = ctx.cfg.eval.ece_bins;
    let mut summary = Vec::new();
    let mut curve = Vec::new();
    for (seed, mut b) in bundles {
        let fit = temperature_fit(&b.logits(&val.features)?, &val.labels, b.kind().predictive_form())?;
        if fit.degenerate {
            log::warn!("seed {seed}: validation logits are constant within rows; keeping T = 1");
        }
        let (c0, k0) = confidence_and_correct(&b, &test.features, &test.labels, ctx.exec)?;
        let before = calibration_curve(&c0, &k0, bins)?;
        b.set_temperature(fit.temperature)?;
        let (c1, k1) = confidence_and_correct(&b, &test.features, &test.labels, ctx.exec)?;
        let after = calibration_curve(&c1, &k1, bins)?;
        b.to_checkpoint().save(&ctx.seed_dir(seed).join("model.calibrated.ckpt"))?;
        summary.push(vec![
            ctx.hash.clone(),
            seed.to_string(),
            fmt_f64(fit.temperature),
            fmt_f64(fit.nll_before),
            fmt_f64(fit.nll_after),
            fmt_f64(ece(&c0, &k0, bins)?),
            fmt_f64(ece(&c1, &k1, bins)?),
            fit.degenerate.to_string(),
        ]);
        curve.extend(curve_rows(&ctx.hash, seed, "before", &before));
        curve.extend(curve_rows(&ctx.hash, seed, "after", &after));
    }
    write_table(
        &ctx.out.join("calibration.csv"),
        &["config_hash", "seed", "temperature", "nll_before", "nll_after", "ece_before", "ece_after", "degenerate"],
        &summary,
    )?;
    write_table(
        &ctx.out.join("calibration_curve.csv"),
        &["config_hash", "seed", "stage", "bin", "lower", "upper", "count", "mean_confidence", "accuracy"],
        &curve,
    )
}

/// Trains a scalar EBM on `train_x` and returns its energy-score AUC-PR against each OOD set.
fn fit_ebm_auc(
    ctx: &Ctx,
    seed: u64,
    stream: u64,
    train_x: &Tensor,
    labels: &[usize],
    test_x: &Tensor,
    ood: &[(String, Tensor)],
    exec: Exec,
) -> Result<Vec<f64>> {
    let spec = ModelSpec { hidden: ctx.cfg.embed.hidden.clone(), ..ModelSpec::new(ModelKind::ScalarEbm) };
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let mut ebm = build_model(&spec, train_x.cols(), classes, &mut job_rng(seed, stream))?;
    train(&mut ebm, train_x, labels, None, &ctx.cfg.embed.train, seed, exec)?;
    ood.iter().map(|(_, x)| Ok(detection_auc(&ebm, test_x, x, ScoreName::Energy, exec)?)).collect()
}

pub fn cmd_embed_density(ctx: &Ctx) -> Result<()> {
    require_classifier(ctx.cfg.model.kind, "embed-density")?;
    let data = prepare(&ctx.cfg.data)?;
    let bundles = load_all(ctx, &data)?;
    let (tr, te) = (&data.splits.train, &data.splits.test);
    let inner = if bundles.len() > 1 { Exec::Sequential } else { ctx.exec };
    let per_seed = ctx.exec.map(&bundles, |(seed, b)| -> Result<Vec<Vec<String>>> {
        let net = &b.members()[0];
        let width = net
            .penultimate_dim()
            .ok_or_else(|| CliError::Validation("embed-density needs a classifier with hidden layers".into()))?;
        let st = Standardizer::fit(&net.penultimate(&tr.features)?)?;
        let embed = |x: &Tensor| -> Result<Tensor> { Ok(st.apply(&net.penultimate(x)?)?) };
        let emb_ood = data.ood.iter().map(|(n, x)| Ok((n.clone(), embed(x)?))).collect::<Result<Vec<_>>>()?;
        let emb = fit_ebm_auc(ctx, *seed, STREAM_EMBED, &embed(&tr.features)?, &tr.labels, &embed(&te.features)?, &emb_ood, inner)?;
        let raw = fit_ebm_auc(ctx, *seed, STREAM_RAW, &tr.features, &tr.labels, &te.features, &data.ood, inner)?;
        let mut rows = Vec::new();
        for (label, dim, aucs) in [("embedding", width, &emb), ("raw", data.dim(), &raw)] {
            for ((name, _), auc) in data.ood.iter().zip(aucs) {
                rows.push(vec![ctx.hash.clone(), seed.to_string(), label.into(), dim.to_string(), name.clone(), fmt_f64(*auc)]);
            }
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_seed {
        rows.extend(r?);
    }
    write_table(&ctx.out.join("embed_density.csv"), &["config_hash", "seed", "features", "dim", "ood_set", "auc_pr"], &rows)
}

fn write_features(path: &Path, x: &Tensor) -> Result<()> {
    let header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = x.iter_rows().map(|r| r.iter().map(|v| format!("{v:?}")).collect()).collect();
    write_table(path, &header, &rows)
}

pub fn cmd_gen_data(ctx: &Ctx) -> Result<()> {
    let data = prepare(&ctx.cfg.data)?;
    let dir = ctx.out.join("data");
    ensure_dir(&dir)?;
    let s = &data.splits;
    for (name, ds) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
        write_csv(ds, &dir.join(format!("{name}.csv")))?;
    }
    for (name, x) in &data.ood {
        write_features(&dir.join(format!("ood_{name}.csv")), x)?;
    }
    write_features(&dir.join("val_ood.csv"), &data.val_ood)?;
    if let Some(st) = &data.standardizer {
        write_json(&dir.join("standardizer.json"), st)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_exact_corners() {
        let g = grid_points([0.0, 1.0, 0.0, 1.0], 2);
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let g = grid_points([-10.0, 10.0, -3.0, 7.0], 7);
        assert_eq!(g.rows(), 49);
        assert_eq!(g.row(48), &[10.0, 7.0]);
        assert_eq!(g.row(6), &[10.0, -3.0]);
    }

    #[test]
    fn verdicts() {
        assert_eq!(ray_verdict(&[1.0]), "single");
        assert_eq!(ray_verdict(&[1.0, 2.0, 3.0]), "increasing");
        assert_eq!(ray_verdict(&[3.0, 2.0]), "decreasing");
        assert_eq!(ray_verdict(&[1.0, 1.0]), "mixed");
    }

    #[test]
    fn aggregate_matches_recomputation() {
        let row = |seed, v| DetectionRow { seed, ood_set: "noise".into(), score: ScoreName::Msp, auc_pr: v, n_id: 1, n_ood: 1 };
        let seeds = vec![
            SeedMetrics { seed: 0, accuracy: Some(0.9), ece: Some(0.1), detection: vec![row(0, 0.8)] },
            SeedMetrics { seed: 1, accuracy: Some(1.0), ece: Some(0.3), detection: vec![row(1, 0.6)] },
        ];
        let agg = aggregate(&seeds);
        assert_eq!(agg.len(), 3);
        assert!((agg[0].mean - 0.95).abs() < 1e-15 && (agg[0].std - 0.05).abs() < 1e-15);
        assert_eq!(agg[2].metric, "auc_pr");
        assert_eq!(agg[2].n_seeds, 2);
        assert!((agg[2].mean - 0.7).abs() < 1e-15);
        let single = aggregate(&seeds[..1]);
        assert_eq!(single[2].std, 0.0);
    }
}
