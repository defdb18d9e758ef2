//! Run configuration: a TOML file whose fields command-line flags override.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use supergame::exper::{McDesign, SamplingCenter};
use supergame::fit::{FitOptions, RecycleMode};
use supergame::{DrawOrder, GameKind, ShockFamily, Theta};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Option<GameKind>,
    #[serde(default)]
    pub family: ShockFamily,
    /// Sender and receiver effects (network games).
    #[serde(default)]
    pub effects: bool,
    pub covariates: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    /// Where `simulate` writes the realized shocks.
    pub shocks: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub draws: Option<usize>,
    pub seed: Option<u64>,
    pub order: Option<DrawOrder>,
    pub recycle: Option<RecycleMode>,
    pub grad_tol: Option<f64>,
    pub rel_tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Data-generating parameter for `simulate`.
    pub theta: Option<Theta>,
    /// Starting value for `estimate`; the probit fit when absent.
    pub start: Option<Theta>,
    /// Sampling parameter for `estimate`; the start when absent.
    pub theta0: Option<Theta>,
    /// Floor on the strategic parameters of the probit start.
    pub delta_floor: Option<f64>,
    pub mc: Option<McConfig>,
}

/// Overrides applied to a named Monte Carlo preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub design: Option<String>,
    pub games: Option<usize>,
    pub players: Option<usize>,
    pub replications: Option<usize>,
    pub radius: Option<f64>,
    pub link_prob: Option<f64>,
    pub beta: Option<Vec<f64>>,
    pub delta: Option<f64>,
    pub symmetric_links: Option<bool>,
    pub center: Option<SamplingCenter>,
    pub delta0_floor: Option<f64>,
    /// One summary row per entry.
    pub draws: Option<Vec<usize>>,
}

/// Flags shared by every subcommand; each overrides its config field.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub draws: Option<usize>,
    pub order: Option<DrawOrder>,
    pub recycle: Option<RecycleMode>,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_DELTA_FLOOR: f64 = 0.05;

impl RunConfig {
    /// Parse `path`; relative file paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.covariates, &mut cfg.adjacency, &mut cfg.outcomes, &mut cfg.shocks, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        self.seed = o.seed.or(self.seed);
        self.draws = o.draws.or(self.draws);
        self.order = o.order.or(self.order);
        self.recycle = o.recycle.or(self.recycle);
        if o.out.is_some() {
            self.out.clone_from(&o.out);
        }
    }

    pub fn kind(&self) -> Result<GameKind> {
        self.kind.context("config is missing `kind`")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn fit_options(&self) -> Result<FitOptions> {
        let d = FitOptions::default();
        let draws = self.draws.unwrap_or(d.draws);
        if draws == 0 {
            bail!("draws must be at least 1");
        }
        Ok(FitOptions {
            draws,
            seed: self.seed(),
            order: self.order.unwrap_or(d.order),
            recycle: self.recycle.unwrap_or(d.recycle),
            grad_tol: self.grad_tol.unwrap_or(d.grad_tol),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            theta0: self.theta0.clone(),
            ..d
        })
    }

    /// The Monte Carlo design and the list of draw counts to run it at.
    pub fn mc_design(&self) -> Result<(McDesign, Vec<usize>)> {
        let mc = self.mc.clone().unwrap_or_default();
        let mut d = match mc.design.as_deref().unwrap_or("many_games") {
            "many_games" => McDesign::many_games(),
            "single_game" => McDesign::single_game(),
            other => bail!("unknown Monte Carlo design '{other}' (expected many_games or single_game)"),
        };
        d.games = mc.games.unwrap_or(d.games);
        d.players = mc.players.unwrap_or(d.players);
        d.replications = mc.replications.unwrap_or(d.replications);
        d.radius = mc.radius.unwrap_or(d.radius);
        d.link_prob = mc.link_prob.unwrap_or(d.link_prob);
        d.beta = mc.beta.unwrap_or(d.beta);
        d.delta = mc.delta.unwrap_or(d.delta);
        d.symmetric_links = mc.symmetric_links.unwrap_or(d.symmetric_links);
        d.center = mc.center.unwrap_or(d.center);
        d.delta0_floor = mc.delta0_floor.unwrap_or(d.delta0_floor);
        d.seed = self.seed.unwrap_or(d.seed);
        let draws = match self.draws {
            Some(s) => vec![s],
            None => mc.draws.unwrap_or_else(|| vec![d.draws]),
        };
        if draws.contains(&0) {
            bail!("draws must be at least 1");
        }
        d.validate()?;
        Ok((d, draws))
    }
}
