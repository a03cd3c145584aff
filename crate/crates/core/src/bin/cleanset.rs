//! Command-line experiment driver.
//!
//! `run` executes the full pipeline for every trial, `sweep` repeats it
//! across values of one parameter, and `augment-only` stops after the
//! clean-set augmentation step. Configuration comes from a `key = value`
//! file; worker count is controlled by the `RAYON_NUM_THREADS` environment
//! variable. Usage and configuration errors exit with code 2, pipeline
//! failures with code 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cleanset::config::{parse_config, ExperimentConfig};
use cleanset::harness::{run_augment_only, run_experiment, run_sweep};
use cleanset::{Error, Result};

#[derive(Parser)]
#[command(name = "cleanset", version, about = "Label-noise-robust training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all trials of the configured experiment and write reports.
    Run(RunArgs),
    /// Run one experiment per value of a swept parameter.
    Sweep(SweepArgs),
    /// Run only dataset, noise, and augmentation; write the augmented set.
    AugmentOnly(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to a `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override the config's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Parameter to vary: r, pi, eta, lambda, label_mode, or ablation.
    #[arg(long)]
    axis: String,
    /// Comma-separated values for the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

fn load(common: &CommonArgs) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&common.config).map_err(Error::io(&common.config))?;
    let mut cfg = parse_config(&text, &common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = load(&args.common)?;
            if let Some(trials) = args.trials {
                cfg.trials = trials;
            }
            if let Some(seed) = args.seed {
                cfg.base_seed = seed;
            }
            let report = run_experiment(&cfg)?;
            println!(
                "student  mean accuracy {:.4} (stddev {:.4})",
                report.student.mean, report.student.stddev
            );
            println!(
                "baseline mean accuracy {:.4} (stddev {:.4})",
                report.baseline.mean, report.baseline.stddev
            );
            println!("reports written to {}", report.out_dir.display());
        }
        Command::Sweep(args) => {
            let cfg = load(&args.common)?;
            let report = run_sweep(&cfg, &args.axis, &args.values)?;
            for point in &report.points {
                println!(
                    "{} = {}: student {:.4}, baseline {:.4}",
                    args.axis, point.value, point.report.student.mean, point.report.baseline.mean
                );
            }
            println!("reports written to {}", report.out_dir.display());
        }
        Command::AugmentOnly(common) => {
            let cfg = load(&common)?;
            let dir = run_augment_only(&cfg)?;
            println!("augmented set written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidParam { .. } | Error::FileFormat { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
