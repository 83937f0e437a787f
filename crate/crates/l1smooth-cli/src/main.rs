//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver divergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use l1smooth::Error;
use l1smooth_cli::config::{ExperimentConfig, ExperimentKind};
use l1smooth_cli::experiments::run_experiment;

#[derive(Parser)]
#[command(
    name = "l1smooth",
    about = "Smoother-based variable splitting for L1-regularized state estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Comma-separated seed list (overrides the config's `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for independent cells (0 = all cores).
    #[arg(long, default_value_t = 0)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured estimation experiment (linear-tracking or
    /// coordinated-turn) over its seed list.
    Solve(RunArgs),
    /// Sweep the regularization weight over a grid, averaging over seeds.
    SweepLambda(RunArgs),
    /// Wall-clock scaling benchmark of the smoother vs. dense batch solvers.
    Scaling(RunArgs),
    /// Dynamic tomography reconstruction pipeline.
    Tomography(RunArgs),
    /// Validate a model config file and print the violation report.
    Validate {
        /// Model config (TOML) to validate.
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(args) => run(args, None),
        Command::SweepLambda(args) => run(args, Some(ExperimentKind::LambdaSweep)),
        Command::Scaling(args) => run(args, Some(ExperimentKind::Scaling)),
        Command::Tomography(args) => run(args, Some(ExperimentKind::Tomography)),
        Command::Validate { config } => validate(config),
    }
}

fn run(args: RunArgs, force_kind: Option<ExperimentKind>) -> Result<(), Error> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(kind) = force_kind {
        config.experiment = kind;
    } else if !matches!(
        config.experiment,
        ExperimentKind::LinearTracking | ExperimentKind::CoordinatedTurn
    ) {
        return Err(Error::Config(format!(
            "`solve` expects a linear-tracking or coordinated-turn experiment, got '{}'; valid names: {}",
            config.experiment.name(),
            ExperimentKind::all_names()
        )));
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    if let Some(output) = args.output {
        config.output = output;
    }
    config.validate()?;

    if args.parallel > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.parallel)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }

    let output = config.output.clone();
    let outcome = run_experiment(&config, &output)?;
    println!("report written to {}", outcome.directory.display());
    if outcome.any_divergence {
        return Err(Error::Diverged("at least one run diverged".to_string()));
    }
    Ok(())
}

fn validate(path: PathBuf) -> Result<(), Error> {
    let model = l1smooth::io::load_linear_model::<f64>(&path)?;
    let report = model.validate();
    if report.is_empty() {
        println!("{}: valid", path.display());
        Ok(())
    } else {
        for violation in &report {
            println!("{}: {violation}", path.display());
        }
        Err(Error::Config(format!(
            "{} violation(s) found",
            report.len()
        )))
    }
}
