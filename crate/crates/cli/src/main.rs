use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use pfa_core::experiment::{self, Context, ExperimentConfig};
use pfa_core::PfaError;

/// Private, fair tabular classification via adversarial representation learning.
#[derive(Debug, Parser)]
#[command(name = "pfa", version)]
struct Cli {
    /// Experiment configuration JSON (missing fields take defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; drives the split, training, sweeps and attacks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Dataset spec JSON; the synthetic generator is used when omitted.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Worker threads for sweeps, ablations and baselines.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic biased dataset and its spec.
    Synth,
    /// Train and evaluate a single PFA model.
    Train,
    /// Sweep coefficients and learning rates, then filter and aggregate.
    Sweep,
    /// Run the three fixed weight settings.
    Ablate,
    /// Run the Gaussian and Laplacian noise baselines over the ε schedule.
    Baseline,
    /// Attack a saved model checkpoint.
    Attack {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Re-filter a saved sweep and emit plot data.
    Report {
        /// `sweep.json` written by the `sweep` command.
        #[arg(long)]
        input: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PfaError>() {
        Some(PfaError::Config(_) | PfaError::Argument(_) | PfaError::Json(_)) => 2,
        Some(
            PfaError::Data(_)
            | PfaError::Io(_)
            | PfaError::Csv(_)
            | PfaError::DegenerateGroup(_)
            | PfaError::Dimension(_),
        ) => 3,
        Some(PfaError::Numeric(_) | PfaError::State(_)) => 4,
        None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    let ctx = Context {
        config,
        seed: cli.seed,
        out: cli.out,
        dataset: cli.dataset,
        jobs: cli.jobs.max(1),
    };
    let files = match &cli.command {
        Command::Synth => experiment::cmd_synth(&ctx),
        Command::Train => experiment::cmd_train(&ctx),
        Command::Sweep => experiment::cmd_sweep(&ctx),
        Command::Ablate => experiment::cmd_ablate(&ctx),
        Command::Baseline => experiment::cmd_baseline(&ctx),
        Command::Attack { checkpoint } => experiment::cmd_attack(&ctx, checkpoint),
        Command::Report { input } => experiment::cmd_report(&ctx, input),
    }
    .with_context(|| format!("{:?} failed", cli.command))?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
