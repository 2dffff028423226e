//! `xmodal` — train and probe the two-branch audio-visual deepfake
//! detector on synthetic corpora.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 runtime abort (non-finite loss).

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::CliConfig;
use xmodal_core::error::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "xmodal",
    version,
    about = "Two-branch audio-visual deepfake detection with correlation distillation"
)]
struct Cli {
    /// Config file with `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a config key (repeatable; beats file values).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Run directory for artifacts (default: $XMODAL_RUN_DIR, else ./run).
    #[arg(long, global = true, value_name = "PATH")]
    run_dir: Option<PathBuf>,

    /// Override the model seed (equivalent to --set seed=N).
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Generate the synthetic corpora and cache teacher labels.
    Preprocess,
    /// Train (or resume) the two-branch model.
    Train,
    /// Score a checkpoint under a generalization protocol.
    Evaluate,
    /// Export per-class sync-correlation distributions.
    Analyze,
    /// Run the built-in oracle/invariant battery.
    Selftest,
}

/// Build the resolved config: defaults → file → `--set` pairs (in order)
/// → `--seed`. Every override is logged.
fn resolve_config(cli: &Cli) -> Result<CliConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            log::info!("config file: {}", path.display());
            CliConfig::load(path)?
        }
        None => CliConfig::default(),
    };
    for pair in &cli.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects KEY=VALUE, got {pair:?}"))
        })?;
        let (key, value) = (key.trim(), value.trim());
        cfg.apply_override(key, value)?;
        log::info!("override: {key} = {value} (command line)");
    }
    if let Some(seed) = cli.seed {
        cfg.apply_override("seed", &seed.to_string())?;
        log::info!("override: seed = {seed} (command line)");
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_run_dir(cli: &Cli) -> PathBuf {
    cli.run_dir
        .clone()
        .or_else(|| std::env::var_os("XMODAL_RUN_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("run"))
}

/// Snapshot the resolved config so the run can be reproduced exactly.
fn write_snapshot(cfg: &CliConfig, run_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let path = run_dir.join("resolved.cfg");
    std::fs::write(&path, cfg.to_kv_string()).map_err(|e| Error::io(&path, e))?;
    log::info!("resolved config snapshot: {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let run_dir = resolve_run_dir(cli);
    write_snapshot(&cfg, &run_dir)?;
    match cli.command {
        Verb::Preprocess => commands::preprocess(&cfg, &run_dir),
        Verb::Train => commands::train(&cfg, &run_dir),
        Verb::Evaluate => commands::evaluate(&cfg, &run_dir),
        Verb::Analyze => commands::analyze(&cfg, &run_dir),
        Verb::Selftest => commands::selftest(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are not errors; usage mistakes are config errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_class() as u8)
        }
    }
}
