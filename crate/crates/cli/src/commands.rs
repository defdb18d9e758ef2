//! Subcommand bodies. Each returns the bytes it would write so tests can
//! call them without a process boundary.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};
use supergame::exper::{derive_seed, draw_shocks, run_mc, simulate_with_shocks, McSummary};
use supergame::fit::{naive_probit, sml_fit, FitOptions, FitResult};
use supergame::lik::{Dataset, Game};
use supergame::validate::{run_all, Level, SuiteReport, ValidateOptions};
use supergame::{Error, Theta};

use crate::config::{RunConfig, DEFAULT_DELTA_FLOOR};
use crate::data::{load_models, load_outcomes, write_outcomes, write_shocks, Inputs, ModelSpec};

fn inputs(cfg: &RunConfig) -> Result<Inputs> {
    let covariates = cfg.covariates.as_deref().context("config is missing `covariates`")?;
    load_models(&ModelSpec { kind: cfg.kind()?, family: cfg.family, effects: cfg.effects, covariates, adjacency: cfg.adjacency.as_deref() })
}

/// Outcomes CSV, and the shocks CSV when the config names a path for it.
pub struct Simulated {
    pub outcomes: Vec<u8>,
    pub shocks: Option<Vec<u8>>,
}

/// Game `g` draws its shocks from `derive_seed(seed, g)`.
pub fn simulate(cfg: &RunConfig) -> Result<Simulated> {
    let theta = cfg.theta.as_ref().context("simulate needs a [theta] table")?;
    let Inputs { models, multi_game } = inputs(cfg)?;
    let seed = cfg.seed();
    let mut shocks = Vec::with_capacity(models.len());
    let mut outcomes = Vec::with_capacity(models.len());
    for (g, m) in models.iter().enumerate() {
        let u = draw_shocks(m, derive_seed(seed, g as u64))?;
        outcomes.push(simulate_with_shocks(m, theta, &u).with_context(|| format!("simulating game {g}"))?);
        shocks.push(u);
    }
    let kind = cfg.kind()?;
    let mut out = Vec::new();
    write_outcomes(&mut out, kind, multi_game, &models, &outcomes)?;
    let shocks = match cfg.shocks {
        Some(_) => {
            let mut buf = Vec::new();
            write_shocks(&mut buf, kind, multi_game, &models, &shocks)?;
            Some(buf)
        }
        None => None,
    };
    Ok(Simulated { outcomes: out, shocks })
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let Inputs { models, .. } = inputs(cfg)?;
    let path = cfg.outcomes.as_deref().context("config is missing `outcomes`")?;
    let outcomes = load_outcomes(path, cfg.kind()?, &models)?;
    let games = models.into_iter().zip(outcomes).map(|(model, outcome)| Game { model, outcome }).collect();
    Ok(Dataset::new(games)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbitBlock {
    pub theta_hat: Theta,
    pub standard_errors: Vec<f64>,
    pub loglik: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimates {
    pub fingerprint: String,
    pub games: usize,
    pub parameters: Vec<String>,
    pub start: Theta,
    pub draws: usize,
    pub seed: u64,
    pub order: supergame::DrawOrder,
    pub recycle: supergame::fit::RecycleMode,
    #[serde(flatten)]
    pub fit: FitResult,
    pub probit: ProbitBlock,
}

#[derive(Clone, Debug, Serialize)]
pub struct FailedEstimate {
    pub fingerprint: String,
    pub error: String,
    pub iterations: usize,
    pub theta: Vec<f64>,
    pub gradient_norm: f64,
}

pub enum EstimateOutcome {
    Done(Box<Estimates>),
    NotConverged(FailedEstimate),
}

/// Probit coefficients with strategic parameters raised to `floor` and
/// zero effects.
pub fn probit_start(data: &Dataset, probit: &FitResult, floor: f64) -> Theta {
    let mut start = probit.theta_hat.clone();
    for d in start.delta.iter_mut().flatten() {
        *d = d.max(floor);
    }
    if let (Some(s), Some(r)) = (data.layout().sender_offset(), data.layout().receiver_offset()) {
        let players = r - s;
        start = start.with_effects(vec![0.0; players], vec![0.0; players]);
    }
    start
}

/// Hash of the dataset, the fit options and the start.
pub fn fingerprint(data: &Dataset, opts: &FitOptions, start: &Theta) -> Result<String> {
    let mut h = Sha256::new();
    h.update(data.fingerprint());
    h.update(serde_json::to_vec(opts)?);
    h.update(serde_json::to_vec(start)?);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn estimate_dataset(data: &Dataset, cfg: &RunConfig) -> Result<EstimateOutcome> {
    let opts = cfg.fit_options()?;
    let probit = naive_probit(data).context("probit comparison fit")?;
    let start = match &cfg.start {
        Some(s) => s.clone(),
        None => probit_start(data, &probit, cfg.delta_floor.unwrap_or(DEFAULT_DELTA_FLOOR)),
    };
    let fingerprint = fingerprint(data, &opts, &start)?;
    info!("estimating on {} games with S = {}", data.len(), opts.draws);
    let fit = match sml_fit(data, &start, &opts) {
        Ok(fit) => fit,
        Err(Error::OptimizerNonConvergence { iterations, theta, gradient_norm }) => {
            let error = Error::OptimizerNonConvergence { iterations, theta: theta.clone(), gradient_norm }.to_string();
            return Ok(EstimateOutcome::NotConverged(FailedEstimate { fingerprint, error, iterations, theta, gradient_norm }));
        }
        Err(e) => return Err(e.into()),
    };
    for w in &fit.warnings {
        warn!("{w}");
    }
    Ok(EstimateOutcome::Done(Box::new(Estimates {
        fingerprint,
        games: data.len(),
        parameters: data.layout().names(),
        start,
        draws: opts.draws,
        seed: opts.seed,
        order: opts.order,
        recycle: opts.recycle,
        fit,
        probit: ProbitBlock { theta_hat: probit.theta_hat, standard_errors: probit.standard_errors, loglik: probit.loglik },
    })))
}

pub fn mc(cfg: &RunConfig) -> Result<(Vec<McSummary>, Vec<u8>)> {
    let (design, draws) = cfg.mc_design()?;
    let mut rows = Vec::new();
    for s in draws {
        let d = supergame::exper::McDesign { draws: s, ..design.clone() };
        info!("Monte Carlo {} with S = {s}, R = {}", d.name, d.replications);
        let (summary, _) = run_mc(&d)?;
        rows.push(summary);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["design", "draws", "mean_delta", "sd_delta", "lr_size", "ci_coverage", "n_failed", "mean_delta_probit"])?;
    for r in &rows {
        w.write_record([
            r.design.clone(),
            r.draws.to_string(),
            r.mean_delta.to_string(),
            r.sd_delta.to_string(),
            r.lr_size.to_string(),
            r.ci_coverage.to_string(),
            r.n_failed.to_string(),
            r.mean_delta_probit.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("writing summary: {e}"))?;
    Ok((rows, bytes))
}

pub fn validate(level: Level, seed: u64, inject_fault: bool) -> Result<Vec<SuiteReport>> {
    Ok(run_all(&ValidateOptions { level, seed, flip_lambda_sign: inject_fault })?)
}

/// Write `bytes` to `path`, or to stdout when absent.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            Ok(out.flush()?)
        }
    }
}
