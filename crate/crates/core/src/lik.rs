//! Importance-sampled likelihood, its gradient, and scenario recycling.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dist::log_sum_exp;
use crate::error::{Error, Result};
use crate::model::{ActionProfile, GameModel, ParamLayout, Payoffs, Theta};
use crate::par;
use crate::sampler::{check_scenario, sample_with, scenario_log_zeta, DrawOrder, ImportanceDraw, Scenario};

/// Common random numbers: uniforms addressed by `(game, draw, coordinate)`
/// from a counter-based stream, so any evaluation order sees the same
/// values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CrnBlock {
    seed: u64,
    draws: usize,
}

impl CrnBlock {
    pub fn new(seed: u64, draws: usize) -> Result<Self> {
        if draws == 0 {
            return Err(Error::InvalidArgument("at least one scenario draw is required".into()));
        }
        Ok(CrnBlock { seed, draws })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// The `n` uniforms of draw `draw` for game `game`, all in (0, 1).
    pub fn uniforms(&self, game: usize, draw: usize, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(game as u64);
        rng.set_word_pos(2 * draw as u128 * n as u128);
        (0..n).map(|_| open_unit(rng.next_u64())).collect()
    }
}

/// Maps 53 random bits to the midpoint grid of (0, 1).
pub(crate) fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// An observed game.
#[derive(Clone, Debug, PartialEq)]
pub struct Game {
    pub model: GameModel,
    pub outcome: ActionProfile,
}

/// Independent games sharing one parameter layout.
#[derive(Clone, Debug)]
pub struct Dataset {
    games: Vec<Game>,
    layout: ParamLayout,
    fingerprint: [u8; 32],
}

impl Dataset {
    pub fn new(games: Vec<Game>) -> Result<Self> {
        let first = games.first().ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        let layout = first.model.layout();
        let kind = first.model.kind();
        for (i, g) in games.iter().enumerate() {
            if g.model.kind() != kind || g.model.layout() != layout {
                return Err(Error::DimensionMismatch(format!("game {i} has a different parameter layout from game 0")));
            }
            if g.outcome.players() != g.model.players() || g.outcome.actions() != g.model.actions() {
                return Err(Error::DimensionMismatch(format!("game {i}: outcome shape differs from the game")));
            }
        }
        let fingerprint = fingerprint_games(&games);
        Ok(Dataset { games, layout, fingerprint })
    }

    pub fn single(model: GameModel, outcome: ActionProfile) -> Result<Self> {
        Self::new(vec![Game { model, outcome }])
    }

    pub fn games(&self) -> &[Game] {
        &self.games
    }

    pub fn len(&self) -> usize {
        self.games.len()
    }

    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Scenario recycling needs exactly one strategic parameter.
    pub fn recyclable(&self) -> bool {
        self.layout.blocks * self.layout.delta_dim == 1
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }
}

fn fingerprint_games(games: &[Game]) -> [u8; 32] {
    let mut h = Sha256::new();
    for g in games {
        let m = &g.model;
        h.update(format!("{:?}/{:?}/{}/{}/{}/{}", m.kind(), m.family(), m.players(), m.actions(), m.n_covariates(), m.has_effects()));
        for c in 0..m.coords() {
            for v in m.covariates(c) {
                h.update(v.to_le_bytes());
            }
        }
        if let Some(net) = m.network() {
            for t in 0..net.players() {
                h.update((t as u64).to_le_bytes());
                for &s in net.peers(t) {
                    h.update((s as u64).to_le_bytes());
                }
            }
        }
        h.update(g.outcome.as_slice().iter().map(|&b| b as u8).collect::<Vec<u8>>());
    }
    h.finalize().into()
}

/// What evaluation needs of a draw: its scenario and `log lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledScenario {
    pub scenario: Scenario,
    pub log_lambda: f64,
}

impl From<&ImportanceDraw> for SampledScenario {
    fn from(d: &ImportanceDraw) -> Self {
        SampledScenario { scenario: d.scenario.clone(), log_lambda: d.log_lambda }
    }
}

/// All draws of every game under one CRN block and sampling parameter.
pub fn draw_scenarios(dataset: &Dataset, crn: &CrnBlock, theta0: &Theta, order: DrawOrder) -> Result<Vec<Vec<ImportanceDraw>>> {
    dataset.layout.check(theta0)?;
    par::try_map_range(dataset.len(), |g| {
        let game = &dataset.games[g];
        let p = Payoffs::new(&game.model, theta0).map_err(|e| e.in_game(g))?;
        par::try_map_range(crn.draws, |s| {
            let uniforms = crn.uniforms(g, s, game.model.coords());
            sample_with(&p, game.outcome.as_slice(), &uniforms, order)
        })
        .map_err(|e| e.in_game(g))
    })
}

/// `log((1/S) sum_s zeta_s(theta) / lambda_s)` for one game.
pub fn simulate_likelihood(model: &GameModel, theta: &Theta, target: &ActionProfile, draws: &[ImportanceDraw]) -> Result<f64> {
    if target.players() != model.players() || target.actions() != model.actions() {
        return Err(Error::DimensionMismatch("target shape differs from game".into()));
    }
    let sampled: Vec<SampledScenario> = draws.iter().map(SampledScenario::from).collect();
    let layout = model.layout();
    Ok(game_term(model, &layout, theta, &sampled, false)?.0)
}

/// Simulated log-likelihood summed over games.
pub fn simulated_loglik(dataset: &Dataset, theta: &Theta, crn: &CrnBlock, theta0: &Theta, order: DrawOrder) -> Result<f64> {
    let sampled = sample_all(dataset, crn, theta0, order)?;
    Ok(evaluate(dataset, &sampled, theta, false)?.0)
}

/// Gradient of [`simulated_loglik`] in the flat parameter layout.
pub fn grad_loglik(dataset: &Dataset, theta: &Theta, crn: &CrnBlock, theta0: &Theta, order: DrawOrder) -> Result<Vec<f64>> {
    let sampled = sample_all(dataset, crn, theta0, order)?;
    Ok(evaluate(dataset, &sampled, theta, true)?.1)
}

/// Per-game gradients of the simulated log-likelihood, in game order.
pub fn score_contributions(dataset: &Dataset, theta: &Theta, crn: &CrnBlock, theta0: &Theta, order: DrawOrder) -> Result<Vec<Vec<f64>>> {
    let sampled = sample_all(dataset, crn, theta0, order)?;
    game_scores(dataset, &sampled, theta)
}

pub(crate) fn game_scores(dataset: &Dataset, sampled: &[Vec<SampledScenario>], theta: &Theta) -> Result<Vec<Vec<f64>>> {
    dataset.layout.check(theta)?;
    par::try_map_range(dataset.len(), |g| {
        game_term(&dataset.games[g].model, &dataset.layout, theta, &sampled[g], true).map(|t| t.1).map_err(|e| e.in_game(g))
    })
}

pub(crate) fn sample_all(dataset: &Dataset, crn: &CrnBlock, theta0: &Theta, order: DrawOrder) -> Result<Vec<Vec<SampledScenario>>> {
    Ok(draw_scenarios(dataset, crn, theta0, order)?.iter().map(|draws| draws.iter().map(SampledScenario::from).collect()).collect())
}

/// Log-likelihood and (optionally) gradient at `theta` over fixed sampled
/// scenarios.
pub(crate) fn evaluate(dataset: &Dataset, sampled: &[Vec<SampledScenario>], theta: &Theta, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    dataset.layout.check(theta)?;
    let layout = &dataset.layout;
    let terms = par::try_map_range(dataset.len(), |g| {
        game_term(&dataset.games[g].model, layout, theta, &sampled[g], want_grad).map_err(|e| e.in_game(g))
    })?;
    let mut value = 0.0;
    let mut grad = vec![0.0; if want_grad { layout.len() } else { 0 }];
    for (v, gr) in terms {
        value += v;
        for (a, b) in grad.iter_mut().zip(&gr) {
            *a += b;
        }
    }
    Ok((value, grad))
}

fn game_term(
    model: &GameModel,
    layout: &ParamLayout,
    theta: &Theta,
    sampled: &[SampledScenario],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let p = Payoffs::unchecked(model, theta)?;
    for s in sampled {
        check_scenario(model, &s.scenario)?;
    }
    let per_draw = par::map_slice(sampled, |s| {
        let log_zeta = scenario_log_zeta(&p, &s.scenario);
        let grad = if want_grad && log_zeta > f64::NEG_INFINITY { grad_log_zeta(&p, layout, &s.scenario) } else { Vec::new() };
        (log_zeta - s.log_lambda, grad)
    });
    let log_ratios: Vec<f64> = per_draw.iter().map(|(a, _)| *a).collect();
    let total = log_sum_exp(&log_ratios);
    if total == f64::NEG_INFINITY || total.is_nan() {
        return Err(Error::AllMassUnderflow { theta: layout.flatten(theta)? });
    }
    let value = total - (sampled.len() as f64).ln();
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; layout.len()];
        for (a, g) in &per_draw {
            let w = (a - total).exp();
            if w > 0.0 {
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += w * v;
                }
            }
        }
    }
    Ok((value, grad))
}

/// Gradient of `log zeta` for one scenario: for every coordinate,
/// `[f(b_hi) db_hi - f(b_lo) db_lo] / (F(b_hi) - F(b_lo))`, where a
/// boundary at level `l` loads on `x_c` through beta, on the statistic of
/// `l` through delta, and with unit weight on the effects.
pub(crate) fn grad_log_zeta(p: &Payoffs<'_>, layout: &ParamLayout, scenario: &Scenario) -> Vec<f64> {
    let model = p.model();
    let family = model.family();
    let mut grad = vec![0.0; layout.len()];
    let mut stat = Vec::with_capacity(layout.delta_dim);
    for (c, bucket) in scenario.buckets.iter().enumerate() {
        let log_mass = bucket.log_mass(p, c);
        let (lo, hi) = bucket.bounds(p, c);
        let r_hi = if bucket.upper.is_some() { (family.log_pdf(hi) - log_mass).exp() } else { 0.0 };
        let r_lo = if bucket.lower.is_some() { (family.log_pdf(lo) - log_mass).exp() } else { 0.0 };
        let shift = r_hi - r_lo;
        let block = model.action_type(c);
        let b0 = layout.beta_offset(block);
        for (k, x) in model.covariates(c).iter().enumerate() {
            grad[b0 + k] += shift * x;
        }
        let d0 = layout.delta_offset(block);
        if let Some(l) = bucket.upper {
            model.level_statistic(c, l, &mut stat);
            for (k, s) in stat.iter().enumerate() {
                grad[d0 + k] += r_hi * s;
            }
        }
        if let Some(l) = bucket.lower {
            model.level_statistic(c, l, &mut stat);
            for (k, s) in stat.iter().enumerate() {
                grad[d0 + k] -= r_lo * s;
            }
        }
        if let (Some(so), Some(ro)) = (layout.sender_offset(), layout.receiver_offset()) {
            let (t, m) = model.split(c);
            grad[so + t] += shift;
            grad[ro + model.dyad_target(t, m)] += shift;
        }
    }
    grad
}

/// Sampled scenarios kept for re-evaluation at any parameter value.
///
/// Valid only while the dataset, sampling parameter, draw count, seed and
/// order are unchanged; a fingerprint of all of them is checked on use.
#[derive(Clone, Debug)]
pub struct ScenarioTemplate {
    sampled: Vec<Vec<SampledScenario>>,
    theta0: Theta,
    dataset_fingerprint: [u8; 32],
    crn: CrnBlock,
    order: DrawOrder,
}

impl ScenarioTemplate {
    pub fn theta0(&self) -> &Theta {
        &self.theta0
    }

    pub fn crn(&self) -> CrnBlock {
        self.crn
    }

    pub fn order(&self) -> DrawOrder {
        self.order
    }

    pub fn sampled(&self) -> &[Vec<SampledScenario>] {
        &self.sampled
    }

    /// True when these templates were built from exactly this
    /// configuration.
    pub fn matches(&self, dataset: &Dataset, crn: &CrnBlock, theta0: &Theta, order: DrawOrder) -> bool {
        self.dataset_fingerprint == dataset.fingerprint() && self.crn == *crn && &self.theta0 == theta0 && self.order == order
    }
}

pub fn build_templates(dataset: &Dataset, crn: &CrnBlock, theta0: &Theta, order: DrawOrder) -> Result<ScenarioTemplate> {
    if !dataset.recyclable() {
        return Err(Error::RecyclingUnavailable);
    }
    Ok(ScenarioTemplate {
        sampled: sample_all(dataset, crn, theta0, order)?,
        theta0: theta0.clone(),
        dataset_fingerprint: dataset.fingerprint(),
        crn: *crn,
        order,
    })
}

pub fn loglik_from_templates(templates: &ScenarioTemplate, dataset: &Dataset, theta: &Theta) -> Result<f64> {
    Ok(loglik_grad_from_templates(templates, dataset, theta, false)?.0)
}

/// Value and, if asked, gradient from templates.
pub fn loglik_grad_from_templates(
    templates: &ScenarioTemplate,
    dataset: &Dataset,
    theta: &Theta,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if templates.dataset_fingerprint != dataset.fingerprint() {
        return Err(Error::StaleTemplates);
    }
    evaluate(dataset, &templates.sampled, theta, want_grad)
}
