//! Config-driven experiment runner for energy-prior networks.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod prepare;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use energy_prior::par::Exec;

use crate::commands::Ctx;
use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "epn", version, about = "Train and evaluate energy-prior and Dirichlet OOD detectors")]
pub struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Replace the configured seed list with a single seed.
    #[arg(long, global = true, value_name = "SEED")]
    pub seed_override: Option<u64>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train one model per seed and write checkpoints plus JSON-lines logs.
    Train,
    /// AUC-PR of every score against every OOD set, aggregated over seeds.
    EvalOod,
    /// Energy along random rays through the origin.
    DiagnoseRay,
    /// Energy, density and uncertainty on a regular 2-D grid.
    GridDensity,
    /// Adversarial accuracy and clean-vs-attacked detection.
    Attack,
    /// Fit a softmax temperature on the validation split.
    Calibrate,
    /// Compare EBMs trained on penultimate activations and on raw features.
    EmbedDensity,
    /// Write the prepared splits and OOD sets as CSV.
    GenData,
    /// Print the full default config as TOML.
    PrintDefaults,
}

/// Resolves the config from flags: file or defaults, then overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed_override {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

pub fn exec_for(threads: Option<usize>) -> Result<Exec> {
    match threads {
        Some(0) => Err(CliError::Validation("--threads must be at least 1".into()).into()),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("thread pool already initialised: {e}");
            }
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None => Ok(Exec::default()),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    if cli.command == Command::PrintDefaults {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let ctx = Ctx::new(cfg, exec_for(cli.threads)?)?;
    let t0 = std::time::Instant::now();
    match cli.command {
        Command::Train => commands::cmd_train(&ctx),
        Command::EvalOod => commands::cmd_eval_ood(&ctx),
        Command::DiagnoseRay => commands::cmd_diagnose_ray(&ctx),
        Command::GridDensity => commands::cmd_grid_density(&ctx),
        Command::Attack => commands::cmd_attack(&ctx),
        Command::Calibrate => commands::cmd_calibrate(&ctx),
        Command::EmbedDensity => commands::cmd_embed_density(&ctx),
        Command::GenData => commands::cmd_gen_data(&ctx),
        Command::PrintDefaults => unreachable!(),
    }?;
    log::info!("done in {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
