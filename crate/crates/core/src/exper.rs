//! Monte Carlo design: peer effects on random geometric graphs, with SML
//! and naive probit fits per replication.

use log::{info, warn};
use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::ShockFamily;
use crate::equil::{least_fixed_point, ShockMatrix};
use crate::error::{Error, Result};
use crate::fit::{naive_probit, sml_fit, FitOptions, CHI2_1_CRIT_05, NORMAL_975};
use crate::lik::{simulated_loglik, CrnBlock, Dataset, Game};
use crate::model::{ActionProfile, GameModel, Network, Payoffs, Theta};
use crate::par;

const STREAM_DESIGN: u64 = 1 << 62;
const STREAM_OUTCOMES: u64 = 2 << 62;

/// Seeded generator on its own stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with an index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Radius giving expected degree 10 at unit density and link probability 0.75.
pub fn default_radius() -> f64 {
    (10.0 / (0.75 * std::f64::consts::PI)).sqrt()
}

/// Where the importance sampler is centered in each replication.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingCenter {
    /// The data-generating parameter.
    #[default]
    Truth,
    /// The naive probit estimate, strategic part clipped below.
    Probit,
    /// Probit first, then one refit centered on the first SML estimate.
    TwoStage,
    /// Probit first, then re-centered on each estimate until it settles.
    Recenter,
}

impl std::str::FromStr for SamplingCenter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(SamplingCenter::Truth),
            "probit" => Ok(SamplingCenter::Probit),
            "two_stage" => Ok(SamplingCenter::TwoStage),
            "recenter" => Ok(SamplingCenter::Recenter),
            other => Err(Error::InvalidArgument(format!("unknown sampling center '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDesign {
    pub name: String,
    pub games: usize,
    pub players: usize,
    pub draws: usize,
    pub replications: usize,
    pub seed: u64,
    pub radius: f64,
    pub link_prob: f64,
    pub beta: Vec<f64>,
    pub delta: f64,
    /// Link both directions of a pair with one draw.
    pub symmetric_links: bool,
    pub center: SamplingCenter,
    /// Lower clip for the probit strategic estimate used as sampling parameter.
    pub delta0_floor: f64,
}

impl McDesign {
    /// Many medium-sized games.
    pub fn many_games() -> Self {
        McDesign {
            name: "many_games".into(),
            games: 100,
            players: 20,
            draws: 10,
            replications: 100,
            seed: 20_240_601,
            radius: default_radius(),
            link_prob: 0.75,
            beta: vec![-1.0, -0.5, -1.0, 0.5],
            delta: 0.2,
            symmetric_links: true,
            center: SamplingCenter::Truth,
            delta0_floor: 0.05,
        }
    }

    /// One large game.
    pub fn single_game() -> Self {
        McDesign { name: "single_game".into(), games: 1, players: 500, draws: 1, ..Self::many_games() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.games == 0 || self.players < 2 || self.draws == 0 || self.replications == 0 {
            return Err(Error::InvalidArgument("design sizes must be positive (and T >= 2)".into()));
        }
        if !(self.radius > 0.0) || !(self.link_prob > 0.0 && self.link_prob < 1.0) {
            return Err(Error::InvalidArgument("radius must be positive and link probability in (0, 1)".into()));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::InvalidArgument("true strategic parameter must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn theta(&self) -> Theta {
        Theta::scalar(self.beta.clone(), self.delta)
    }
}

/// Agents uniform on `[0, sqrt(T)]^2`; pairs within distance `r` link with
/// probability `p` (a logistic shock below `ln(p / (1 - p))`), others never.
pub fn random_geometric_graph(players: usize, radius: f64, link_prob: f64, symmetric: bool, rng: &mut impl RngCore) -> Network {
    geometric_graph_with_positions(players, radius, link_prob, symmetric, rng).0
}

/// [`random_geometric_graph`] together with the agents' positions.
pub fn geometric_graph_with_positions(
    players: usize,
    radius: f64,
    link_prob: f64,
    symmetric: bool,
    rng: &mut impl RngCore,
) -> (Network, Vec<(f64, f64)>) {
    let side = (players as f64).sqrt();
    let pos: Vec<(f64, f64)> = (0..players).map(|_| (rng.random::<f64>() * side, rng.random::<f64>() * side)).collect();
    let a = (link_prob / (1.0 - link_prob)).ln();
    let link = |rng: &mut dyn RngCore| {
        let q: f64 = rng.random();
        // logistic shock via its quantile
        a - (q.ln() - (-q).ln_1p()) >= 0.0
    };
    // bucket agents into cells of side r so only neighboring cells are compared
    let cells_per_side = ((side / radius).floor() as usize).clamp(1, 4096);
    let cell_of = |v: f64| ((v / side * cells_per_side as f64) as usize).min(cells_per_side - 1);
    let mut grid: Vec<Vec<usize>> = vec![Vec::new(); cells_per_side * cells_per_side];
    for (i, &(x, y)) in pos.iter().enumerate() {
        grid[cell_of(x) * cells_per_side + cell_of(y)].push(i);
    }
    let mut pairs = Vec::new();
    let r2 = radius * radius;
    for t in 0..players {
        let (cx, cy) = (cell_of(pos[t].0), cell_of(pos[t].1));
        let mut close = Vec::new();
        for gx in cx.saturating_sub(1)..=(cx + 1).min(cells_per_side - 1) {
            for gy in cy.saturating_sub(1)..=(cy + 1).min(cells_per_side - 1) {
                for &s in &grid[gx * cells_per_side + gy] {
                    let (dx, dy) = (pos[t].0 - pos[s].0, pos[t].1 - pos[s].1);
                    if s != t && dx * dx + dy * dy <= r2 && (!symmetric || s > t) {
                        close.push(s);
                    }
                }
            }
        }
        close.sort_unstable();
        for s in close {
            if link(rng) {
                pairs.push((t, s));
                if symmetric {
                    pairs.push((s, t));
                }
            }
        }
    }
    (Network::from_pairs(players, pairs).expect("generated links are in range and off the diagonal"), pos)
}

/// Two Bernoulli(1/2) and two uniform covariates per agent.
pub fn draw_covariates(players: usize, rng: &mut impl RngCore) -> Vec<Vec<f64>> {
    (0..players)
        .map(|_| {
            let b1 = rng.random_bool(0.5) as u8 as f64;
            let b2 = rng.random_bool(0.5) as u8 as f64;
            vec![b1, b2, rng.random(), rng.random()]
        })
        .collect()
}

/// The design's fixed graphs and covariates, one model per game.
pub fn build_models(design: &McDesign) -> Result<Vec<GameModel>> {
    design.validate()?;
    let mut rng = stream_rng(design.seed, STREAM_DESIGN);
    (0..design.games)
        .map(|_| {
            let net = random_geometric_graph(design.players, design.radius, design.link_prob, design.symmetric_links, &mut rng);
            let x = draw_covariates(design.players, &mut rng);
            GameModel::peer_effects_count(&x, net)
        })
        .collect()
}

/// Seeded shocks from the model's family.
pub fn draw_shocks(model: &GameModel, seed: u64) -> Result<ShockMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = model.family();
    let u: Vec<f64> = (0..model.coords())
        .map(|_| match family {
            ShockFamily::Normal => rng.sample(StandardNormal),
            ShockFamily::Logistic => family.quantile(crate::lik::open_unit(rng.next_u64())),
        })
        .collect();
    ShockMatrix::new(model.players(), model.actions(), u)
}

/// Seeded shocks and the minimal equilibrium they select.
pub fn simulate_game(model: &GameModel, theta: &Theta, seed: u64) -> Result<ActionProfile> {
    simulate_with_shocks(model, theta, &draw_shocks(model, seed)?)
}

pub fn simulate_with_shocks(model: &GameModel, theta: &Theta, u: &ShockMatrix) -> Result<ActionProfile> {
    let p = Payoffs::new(model, theta)?;
    let (y, _) = least_fixed_point(&p, u.as_slice());
    ActionProfile::from_vec(model.players(), model.actions(), y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub delta_hat: f64,
    pub se_delta: f64,
    pub lr_stat: f64,
    pub lr_reject: bool,
    pub ci_covers: bool,
    pub delta_probit: f64,
    pub converged: bool,
}

/// Simulate one dataset and fit it.
pub fn run_replication(design: &McDesign, models: &[GameModel], index: usize) -> Result<Replication> {
    let truth = design.theta();
    let outcome_seed = derive_seed(design.seed ^ STREAM_OUTCOMES, index as u64);
    let games = models
        .iter()
        .enumerate()
        .map(|(g, m)| Ok(Game { model: m.clone(), outcome: simulate_game(m, &truth, derive_seed(outcome_seed, g as u64))? }))
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(games)?;
    let probit = naive_probit(&data)?;
    let delta_probit = probit.theta_hat.delta[0][0];
    let mut start = probit.theta_hat.clone();
    start.delta[0][0] = delta_probit.max(design.delta0_floor);
    let theta0 = if design.center == SamplingCenter::Truth { truth.clone() } else { start };

    let opts = FitOptions {
        draws: design.draws,
        seed: derive_seed(design.seed, index as u64),
        theta0: Some(theta0.clone()),
        recenter: design.center == SamplingCenter::Recenter,
        ..FitOptions::default()
    };
    let mut fit = sml_fit(&data, &theta0, &opts)?;
    // The sampling parameter behind the final simulated likelihood.
    let mut center = theta0;
    match design.center {
        SamplingCenter::TwoStage => {
            center = fit.theta_hat.clone();
            fit = sml_fit(&data, &center, &FitOptions { theta0: Some(center.clone()), ..opts.clone() })?;
        }
        SamplingCenter::Recenter => center = fit.theta_hat.clone(),
        SamplingCenter::Truth | SamplingCenter::Probit => {}
    }
    let delta_idx = data.layout().delta_range().start;
    let delta_hat = fit.theta_hat.delta[0][0];
    let se_delta = fit.standard_errors[delta_idx];

    // Both sides of the LR statistic use one simulated likelihood.
    let crn = CrnBlock::new(opts.seed, opts.draws)?;
    let unrestricted = simulated_loglik(&data, &fit.theta_hat, &crn, &center, opts.order)?;
    let mut restricted_start = fit.theta_hat.clone();
    restricted_start.delta[0][0] = design.delta;
    let restricted_opts = FitOptions { fixed: vec![delta_idx], compute_se: false, recenter: false, theta0: Some(center), ..opts };
    let restricted = sml_fit(&data, &restricted_start, &restricted_opts)?;
    let lr_stat = 2.0 * (unrestricted - restricted.loglik).max(0.0);
    Ok(Replication {
        index,
        delta_hat,
        se_delta,
        lr_stat,
        lr_reject: lr_stat > CHI2_1_CRIT_05,
        ci_covers: (delta_hat - design.delta).abs() <= NORMAL_975 * se_delta,
        delta_probit,
        converged: fit.converged && restricted.converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub design: String,
    pub draws: usize,
    pub mean_delta: f64,
    pub sd_delta: f64,
    pub lr_size: f64,
    pub ci_coverage: f64,
    pub n_failed: usize,
    pub mean_delta_probit: f64,
}

pub fn summarize(design: &McDesign, reps: &[Replication], n_failed: usize) -> McSummary {
    let n = reps.len() as f64;
    let mean = |f: &dyn Fn(&Replication) -> f64| reps.iter().map(f).sum::<f64>() / n;
    let mean_delta = mean(&|r| r.delta_hat);
    let var = reps.iter().map(|r| (r.delta_hat - mean_delta).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    McSummary {
        design: design.name.clone(),
        draws: design.draws,
        mean_delta,
        sd_delta: var.sqrt(),
        lr_size: mean(&|r| r.lr_reject as u8 as f64),
        ci_coverage: mean(&|r| r.ci_covers as u8 as f64),
        n_failed,
        mean_delta_probit: mean(&|r| r.delta_probit),
    }
}

/// Run every replication; failures are logged and counted, not fatal.
pub fn run_mc(design: &McDesign) -> Result<(McSummary, Vec<Replication>)> {
    let models = build_models(design)?;
    let mean_degree =
        models.iter().map(|m| m.network().map_or(0, Network::link_count) as f64 / m.players() as f64).sum::<f64>() / models.len() as f64;
    info!("design {}: mean degree {mean_degree:.2}", design.name);
    let outcomes = par::map_range(design.replications, |r| run_replication(design, &models, r));
    let mut reps = Vec::new();
    let mut failed = 0;
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(rep) => reps.push(rep),
            Err(e) => {
                warn!("replication {r} failed: {e}");
                failed += 1;
            }
        }
    }
    if reps.is_empty() {
        return Err(Error::InvalidArgument(format!("all {failed} replications failed")));
    }
    Ok((summarize(design, &reps, failed), reps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_radius_gives_empty_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_geometric_graph(50, 1e-9, 0.75, true, &mut rng);
        assert_eq!(g.link_count(), 0);
    }

    #[test]
    fn huge_radius_and_sure_links_give_complete_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_geometric_graph(12, 10.0, 1.0, true, &mut rng);
        assert_eq!(g.link_count(), 12 * 11);
    }

    #[test]
    fn simulation_is_reproducible() {
        let design = McDesign { games: 2, ..McDesign::many_games() };
        let models = build_models(&design).unwrap();
        let a = simulate_game(&models[0], &design.theta(), 9).unwrap();
        assert_eq!(a, simulate_game(&models[0], &design.theta(), 9).unwrap());
        assert_eq!(models, build_models(&design).unwrap());
    }

    #[test]
    fn derive_seed_spreads_indices() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
