//! `dco`: tune, calibrate, predict, and experiment over config files.
//!
//! Exit codes: 0 success, 1 internal error, 2 configuration or input error,
//! 3 tuning fell back to the infeasible rule (output still written).

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "dco",
    about = "Decoupled conformal optimisation: tuning, calibration, and experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config `out_dir`, else the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the method list, comma separated.
    #[arg(long)]
    methods: Option<String>,
    /// Override the miscoverage level ("1/5" or "0.2").
    #[arg(long)]
    alpha: Option<String>,
    /// Override the number of seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Tune/cal budget shares like "33/67"; several values switch the
    /// experiment into ablation mode.
    #[arg(long)]
    ratios: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    /// Serialized rule (rule.json written by `calibrate`).
    #[arg(long)]
    rule: PathBuf,
    /// Input CSV: score rows or feature rows.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the structural search once and write tune_result.json.
    Tune(RunArgs),
    /// Tune, then recalibrate on the calibration split; writes rule.json.
    Calibrate(RunArgs),
    /// Repeated-split experiment, ablation, or alpha sweep.
    Experiment(RunArgs),
    /// Apply a stored rule to score or feature rows.
    Predict(PredictArgs),
}

fn load_config(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load(&args.config)?;
    let overrides = Overrides {
        seed: args.seed,
        methods: args.methods.clone(),
        alpha: args.alpha.clone(),
        seeds: args.seeds,
        ratios: args.ratios.clone(),
    };
    overrides.apply(&mut config)?;
    Ok(config)
}

/// Config-shaped failures exit 2; only output I/O after validation exits 1.
fn exit_code_for(error: &anyhow::Error) -> u8 {
    for cause in error.chain() {
        if let Some(core_err) = cause.downcast_ref::<dco_core::Error>() {
            return match core_err {
                dco_core::Error::Io(_) | dco_core::Error::ThreadPool(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
    }
    2
}

fn run_with_config<F>(args: &RunArgs, command: F) -> (u8, Option<anyhow::Error>)
where
    F: FnOnce(&RunConfig, &Option<PathBuf>) -> anyhow::Result<u8>,
{
    let config = match load_config(args) {
        Ok(config) => config,
        Err(e) => return (2, Some(e)),
    };
    match command(&config, &args.out) {
        Ok(code) => (code, None),
        Err(e) => (exit_code_for(&e), Some(e)),
    }
}

fn run(cli: Cli) -> (u8, Option<anyhow::Error>) {
    match cli.command {
        Command::Tune(args) => run_with_config(&args, commands::cmd_tune),
        Command::Calibrate(args) => run_with_config(&args, commands::cmd_calibrate),
        Command::Experiment(args) => run_with_config(&args, commands::cmd_experiment),
        Command::Predict(args) => {
            match commands::cmd_predict(&args.rule, &args.input, &args.out) {
                Ok(code) => (code, None),
                // Missing rule files and malformed inputs are config problems.
                Err(e) => (2, Some(e)),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (code, error) = run(cli);
    if let Some(error) = error {
        eprintln!("error: {error:#}");
    }
    ExitCode::from(code)
}
