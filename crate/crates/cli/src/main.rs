use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use supergame::fit::RecycleMode;
use supergame::validate::Level;
use supergame::DrawOrder;
use supergame_cli::commands::{self, EstimateOutcome};
use supergame_cli::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "supergame", version, about = "Simulated maximum likelihood for supermodular games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Importance draws per game.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long, value_parser = parse::<DrawOrder>)]
    order: Option<DrawOrder>,
    #[arg(long, value_parser = parse::<RecycleMode>)]
    recycle: Option<RecycleMode>,
    /// Worker threads for the library's parallel loops.
    #[arg(long, env = "SUPERGAME_THREADS")]
    threads: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw outcomes from the configured game and parameter.
    Simulate(Common),
    /// Fit the configured data by SML, with a probit comparison.
    Estimate(Common),
    /// Run the Monte Carlo design and write a summary CSV.
    Mc(Common),
    /// Run the self-check suites; exits nonzero on any failure.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "quick", value_parser = parse::<Level>)]
        level: Level,
        /// Negate the sampler's log weights to confirm the suites notice.
        #[arg(long)]
        inject_fault: bool,
    },
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

fn setup(c: &Common) -> Result<RunConfig> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides { seed: c.seed, draws: c.draws, order: c.order, recycle: c.recycle, out: c.out.clone() });
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = setup(&c)?;
            let sim = commands::simulate(&cfg)?;
            if let (Some(path), Some(bytes)) = (&cfg.shocks, &sim.shocks) {
                commands::emit(Some(path), bytes)?;
            }
            commands::emit(cfg.out.as_deref(), &sim.outcomes)?;
        }
        Command::Estimate(c) => {
            let cfg = setup(&c)?;
            let data = commands::load_dataset(&cfg)?;
            match commands::estimate_dataset(&data, &cfg)? {
                EstimateOutcome::Done(est) => {
                    commands::emit(cfg.out.as_deref(), &serde_json::to_vec_pretty(&est)?)?;
                }
                EstimateOutcome::NotConverged(failed) => {
                    commands::emit(cfg.out.as_deref(), &serde_json::to_vec_pretty(&failed)?)?;
                    eprintln!("error: {}", failed.error);
                    return Ok(ExitCode::from(2));
                }
            }
        }
        Command::Mc(c) => {
            let cfg = setup(&c)?;
            let (_, csv) = commands::mc(&cfg)?;
            commands::emit(cfg.out.as_deref(), &csv)?;
        }
        Command::Validate { common, level, inject_fault } => {
            let cfg = setup(&common)?;
            let reports = commands::validate(level, cfg.seed(), inject_fault)?;
            for r in &reports {
                eprintln!("{:<22} {} {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail);
            }
            commands::emit(cfg.out.as_deref(), &serde_json::to_vec_pretty(&reports)?)?;
            if reports.iter().any(|r| !r.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
