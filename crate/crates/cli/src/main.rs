use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod inputs;
mod output;

use commands::{Context, Failure, Status};
use config::RunConfig;

/// Fit, simulate and cross-validate log-Gaussian Cox process models on gridded domains.
#[derive(Parser)]
#[command(name = "lgcp-cv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a point pattern; writes points.csv and truth.csv.
    Simulate(RunArgs),
    /// Fit one model to the full data; writes posterior_summary.csv and field_posterior_mean.asc.
    Fit(RunArgs),
    /// Cross-validate a model sweep; writes crps_by_model.csv and per-model maps.
    Crossval(RunArgs),
    /// Rank a crps_by_model.csv table; writes ranked_models.csv.
    Rank(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn context(args: &RunArgs) -> Result<Context, Failure> {
    let config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let workers = args.workers.or(config.workers).unwrap_or(1);
    if workers == 0 {
        return Err(lgcp_cv::Error::Usage("--workers must be at least 1".into()).into());
    }
    Ok(Context {
        seed: args.seed.or(config.seed).unwrap_or(0),
        workers,
        out: args.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from(".")),
        config,
    })
}

fn run(cli: Cli) -> Result<Status, Failure> {
    let (args, f): (&RunArgs, fn(&Context) -> lgcp_cv::Result<Status>) = match &cli.command {
        Command::Simulate(a) => (a, commands::simulate),
        Command::Fit(a) => (a, commands::fit),
        Command::Crossval(a) => (a, commands::crossval),
        Command::Rank(a) => (a, commands::rank),
    };
    let ctx = context(args)?;
    Ok(f(&ctx)?)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let code = match run(Cli::parse()) {
        Ok(Status::Success) => 0,
        Ok(Status::Partial) => {
            eprintln!("warning: some tasks failed; see failures.csv");
            1
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    };
    std::process::exit(code);
}
