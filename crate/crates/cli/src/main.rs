use std::path::PathBuf;
use std::process::ExitCode;

use afsense_cli::commands::{self, EvalMode};
use afsense_cli::{Globals, Outcome};
use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

/// Acoustic AF screening pipeline.
#[derive(Parser)]
#[command(name = "afsense", version, about)]
struct Cli {
    /// TOML pipeline configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or directory for synth and eval.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Bypass the quality gate.
    #[arg(long, global = true)]
    force: bool,
    /// Trained model file.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labelled corpus of WAV recordings from a scenario file.
    Synth { scenario: PathBuf },
    /// Demodulate a WAV recording into per-carrier I/Q and phase.
    Extract { input: PathBuf },
    /// Score signal quality (exit 2 when the gate fails).
    Assess { input: PathBuf },
    /// Eliminate static components, pick a carrier and denoise.
    Purify { input: PathBuf },
    /// Train the detector on a manifest.
    Train { manifest: PathBuf },
    /// Classify one recording, record or segment (exit 2 on abstain).
    Detect { input: PathBuf },
    /// Evaluate on a manifest: held-out with --model, or cross-validation.
    Eval {
        manifest: PathBuf,
        /// Record-level stratified k-fold.
        #[arg(long, conflicts_with = "loso")]
        kfold: Option<usize>,
        /// Leave one subject out.
        #[arg(long)]
        loso: bool,
    },
}

fn run(cli: Cli) -> Result<Outcome> {
    let g = Globals::resolve(cli.config.as_deref(), cli.seed, cli.force, cli.out, cli.model)?;
    match cli.command {
        Command::Synth { scenario } => commands::synth(&g, &scenario),
        Command::Extract { input } => commands::extract(&g, &input),
        Command::Assess { input } => commands::assess_cmd(&g, &input),
        Command::Purify { input } => commands::purify_cmd(&g, &input),
        Command::Train { manifest } => commands::train_cmd(&g, &manifest),
        Command::Detect { input } => commands::detect(&g, &input),
        Command::Eval { manifest, kfold, loso } => {
            let mode = match (kfold, loso, g.model.is_some()) {
                (Some(k), false, false) => EvalMode::KFold(k),
                (None, true, false) => EvalMode::Loso,
                (None, false, true) => EvalMode::Holdout,
                _ => bail!("eval needs exactly one of --model, --kfold K or --loso"),
            };
            commands::eval_cmd(&g, &manifest, mode)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AFSENSE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(o) => ExitCode::from(o.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
