//! `budget-market`: synthesize data, tune models, run market sessions and
//! benchmark delivered forecasts.
//!
//! Exit codes: 0 on success, 2 for bad arguments or configuration, 1 for
//! internal failures.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use budget_market::MarketError;
use clap::{Args, Parser, Subcommand};

use config::{Preset, RunConfig, DEFAULT_SEED};
use manifest::{Manifest, OutputDir};

pub const JOBS_ENV: &str = "BUDGET_MARKET_JOBS";

/// Error caused by the invocation rather than by the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "budget-market", version, about = "Budget-constrained forecasting market simulator")]
struct Cli {
    /// Worker threads; the BUDGET_MARKET_JOBS environment variable takes precedence.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset and write it with its ground truth.
    Synth(Common),
    /// Grid-search spline degree, knots and penalty for one buyer.
    Tune(Common),
    /// Run one market session, or a rolling sequence of them.
    RunSession(SessionArgs),
    /// Compare local and market forecasts.
    Benchmark(SessionArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; takes precedence over --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Seed for synthetic data; overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SessionArgs {
    #[command(flatten)]
    common: Common,
    /// Refit the models at every rolling session instead of reusing the first.
    #[arg(long)]
    re_estimate: bool,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Tune(_) => "tune",
            Command::RunSession(_) => "run-session",
            Command::Benchmark(_) => "benchmark",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Synth(c) | Command::Tune(c) => c,
            Command::RunSession(s) | Command::Benchmark(s) => &s.common,
        }
    }
}

fn jobs(cli: Option<usize>) -> Result<Option<usize>, UsageError> {
    let jobs = match std::env::var(JOBS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            Some(v.trim().parse::<usize>().map_err(|_| UsageError(format!("{JOBS_ENV}={v:?} is not a thread count")))?)
        }
        _ => cli,
    };
    if jobs == Some(0) {
        return Err(UsageError("jobs must be at least 1".into()));
    }
    Ok(jobs)
}

fn load(common: &Common) -> Result<RunConfig, UsageError> {
    match (&common.config, common.preset) {
        (Some(path), preset) => {
            if preset.is_some() {
                log::info!("--config given; ignoring --preset");
            }
            RunConfig::load(path)
        }
        (None, Some(p)) => Ok(RunConfig::preset(p)),
        (None, None) => Err(UsageError("either --config or --preset is required".into())),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let jobs = jobs(cli.jobs)?;
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let common = cli.command.common();
    let cfg = load(common)?;
    let seed = common.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let mut out = OutputDir::new(
        &common.out,
        Manifest {
            command: cli.command.name().to_string(),
            preset: common.preset.map(|p| format!("{p:?}").to_lowercase()),
            config: common.config.clone(),
            seed,
            out: common.out.clone(),
            jobs,
            artifacts: Vec::new(),
            warnings: Vec::new(),
            timings: Vec::new(),
        },
    );
    match &cli.command {
        Command::Synth(_) => commands::synth(&cfg, seed, &mut out)?,
        Command::Tune(_) => commands::tune_command(&cfg, seed, &mut out)?,
        Command::RunSession(s) => commands::run_session_command(&cfg, seed, s.re_estimate, &mut out)?,
        Command::Benchmark(s) => commands::benchmark(&cfg, seed, s.re_estimate, &mut out)?,
    }
    let manifest = out.finish()?;
    log::info!("wrote {} artifacts to {}", manifest.artifacts.len(), manifest.out.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<MarketError>() {
            return if e.is_usage() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
