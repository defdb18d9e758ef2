//! Self-check suites run by `supergame validate`: sampler validity,
//! weight normalization, oracle agreement, gradient and threshold checks
//! on randomized small games.

use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::equil::{least_fixed_point, ShockMatrix};
use crate::error::Result;
use crate::exper::{derive_seed, simulate_with_shocks};
use crate::lik::{draw_scenarios, grad_loglik, simulated_loglik, CrnBlock, Dataset};
use crate::model::{ActionProfile, GameKind, GameModel, Network, Payoffs, Theta};
use crate::oracle::{consistent_scenarios, exact_likelihood, scenario_log_lambda, threshold_bisection};
use crate::sampler::{find_threshold, log_zeta, sample_scenario, DrawOrder};

/// A game, a parameter, and a target reachable as a minimal equilibrium.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: GameModel,
    pub theta: Theta,
    pub target: ActionProfile,
}

fn normal_row(rng: &mut impl RngCore, k: usize, scale: f64) -> Vec<f64> {
    (0..k).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_network(rng: &mut impl RngCore, players: usize, p: f64) -> Network {
    let pairs: Vec<(usize, usize)> = (0..players).flat_map(|t| (0..players).map(move |s| (t, s))).filter(|&(t, s)| t != s).collect();
    let kept: Vec<(usize, usize)> = pairs.into_iter().filter(|_| rng.random_bool(p)).collect();
    Network::from_pairs(players, kept).expect("pairs are valid")
}

/// Random game of `kind` with `players` agents; the target is the minimal
/// equilibrium at standard normal shocks.
pub fn random_instance(rng: &mut impl RngCore, kind: GameKind, players: usize) -> Result<Instance> {
    let k = 2;
    let (model, theta) = match kind {
        GameKind::Coordination => {
            let m = GameModel::coordination([normal_row(rng, k, 1.0), normal_row(rng, k, 1.0)])?;
            (m, Theta::scalar(normal_row(rng, k, 0.7), rng.random_range(0.1..1.5)))
        }
        GameKind::PeerEffectsMean | GameKind::PeerEffectsCount => {
            let x: Vec<Vec<f64>> = (0..players).map(|_| normal_row(rng, k, 1.0)).collect();
            let net = random_network(rng, players, 0.6);
            let m = if kind == GameKind::PeerEffectsMean {
                GameModel::peer_effects_mean(&x, net)?
            } else {
                GameModel::peer_effects_count(&x, net)?
            };
            (m, Theta::scalar(normal_row(rng, k, 0.7), rng.random_range(0.1..1.0)))
        }
        GameKind::MultiActionPeer => {
            let actions = 2;
            let x: Vec<Vec<f64>> = (0..players * actions).map(|_| normal_row(rng, k, 1.0)).collect();
            let net = random_network(rng, players, 0.7);
            let m = GameModel::multi_action_peer(players, actions, &x, Some(net))?;
            let theta = Theta {
                beta: (0..actions).map(|_| normal_row(rng, k, 0.7)).collect(),
                delta: (0..actions).map(|_| (0..1 + actions).map(|_| rng.random_range(0.05..0.8)).collect()).collect(),
                sender_effects: None,
                receiver_effects: None,
            };
            (m, theta)
        }
        GameKind::DirectedNetworkSupport | GameKind::DirectedNetworkReciprocity => {
            let coords = players * (players - 1);
            let x: Vec<Vec<f64>> = (0..coords).map(|_| normal_row(rng, k, 1.0)).collect();
            let effects = rng.random_bool(0.5);
            let m = if kind == GameKind::DirectedNetworkSupport {
                GameModel::network_support(players, &x, effects)?
            } else {
                GameModel::network_reciprocity(players, &x, effects)?
            };
            let delta = if kind == GameKind::DirectedNetworkSupport {
                vec![rng.random_range(0.1..1.0)]
            } else {
                vec![rng.random_range(0.1..1.0), rng.random_range(0.1..0.6)]
            };
            let mut theta = Theta { beta: vec![normal_row(rng, k, 0.7)], delta: vec![delta], sender_effects: None, receiver_effects: None };
            if effects {
                theta = theta.with_effects(normal_row(rng, players, 0.3), normal_row(rng, players, 0.3));
            }
            (m, theta)
        }
    };
    let u: Vec<f64> = (0..model.coords()).map(|_| rng.sample(StandardNormal)).collect();
    let target = simulate_with_shocks(&model, &theta, &ShockMatrix::new(model.players(), model.actions(), u)?)?;
    Ok(Instance { model, theta, target })
}

/// Uniforms strictly inside (0, 1).
pub fn uniforms(rng: &mut impl RngCore, n: usize) -> Vec<f64> {
    (0..n).map(|_| crate::lik::open_unit(rng.next_u64())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(crate::Error::InvalidArgument(format!("unknown validation level '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValidateOptions {
    pub level: Level,
    pub seed: u64,
    /// Deliberately corrupt the sampling weights (negate `log lambda`) to
    /// confirm the suites catch it.
    pub flip_lambda_sign: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn scaled(level: Level, quick: usize, full: usize) -> usize {
    match level {
        Level::Quick => quick,
        Level::Full => full,
    }
}

fn sign(opts: &ValidateOptions) -> f64 {
    if opts.flip_lambda_sign {
        -1.0
    } else {
        1.0
    }
}

/// Every sampled shock vector selects the target as minimal equilibrium.
pub fn sampler_validity(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 1));
    let instances = scaled(opts.level, 30, 200);
    let per = scaled(opts.level, 20, 50);
    let kinds = [GameKind::Coordination, GameKind::PeerEffectsMean, GameKind::PeerEffectsCount, GameKind::DirectedNetworkSupport];
    let (mut total, mut bad) = (0, 0);
    for i in 0..instances {
        let kind = kinds[i % kinds.len()];
        let players = match kind {
            GameKind::Coordination => 2,
            GameKind::DirectedNetworkSupport => rng.random_range(3..=5),
            _ => rng.random_range(3..=6),
        };
        let inst = random_instance(&mut rng, kind, players)?;
        let p = Payoffs::new(&inst.model, &inst.theta)?;
        for _ in 0..per {
            let u = uniforms(&mut rng, inst.model.coords());
            let d = sample_scenario(&inst.model, &inst.theta, &inst.target, &u, DrawOrder::Index)?;
            total += 1;
            if least_fixed_point(&p, d.u.as_slice()).0 != inst.target.as_slice() {
                bad += 1;
            }
        }
    }
    Ok(SuiteReport { name: "sampler-validity", passed: bad == 0, detail: format!("{bad} of {total} draws missed the target") })
}

fn tiny_instance(rng: &mut impl RngCore, i: usize) -> Result<Instance> {
    match i % 4 {
        0 => random_instance(rng, GameKind::Coordination, 2),
        1 => random_instance(rng, GameKind::PeerEffectsMean, 3),
        2 => random_instance(rng, GameKind::PeerEffectsCount, 4),
        _ => random_instance(rng, GameKind::DirectedNetworkSupport, 3),
    }
}

/// Sampling probabilities over the target's scenarios add up to one.
pub fn lambda_normalization(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 2));
    let instances = scaled(opts.level, 20, 100);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let inst = tiny_instance(&mut rng, i)?;
        let mut total = 0.0;
        for s in consistent_scenarios(&inst.model, &inst.theta, &inst.target)? {
            let ll = scenario_log_lambda(&inst.model, &inst.theta, &inst.target, DrawOrder::Index, &s.representative)?;
            total += ll.map_or(0.0, |v| (sign(opts) * v).exp());
        }
        worst = worst.max((total - 1.0).abs());
    }
    Ok(SuiteReport { name: "lambda-normalization", passed: worst <= 1e-9, detail: format!("max |sum - 1| = {worst:e}") })
}

/// Importance-sampling estimate against the enumerated likelihood.
pub fn oracle_equivalence(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 3));
    let instances = scaled(opts.level, 40, 200);
    let draws = 2000;
    let mut within = 0;
    for i in 0..instances {
        let inst = tiny_instance(&mut rng, i)?;
        let exact = exact_likelihood(&inst.model, &inst.theta, &inst.target)?.probability;
        let data = Dataset::single(inst.model.clone(), inst.target.clone())?;
        let crn = CrnBlock::new(rng.next_u64(), draws)?;
        let ws: Vec<f64> = draw_scenarios(&data, &crn, &inst.theta, DrawOrder::Index)?[0]
            .iter()
            .map(|d| Ok((log_zeta(&inst.model, &inst.theta, &d.scenario)? - sign(opts) * d.log_lambda).exp()))
            .collect::<Result<_>>()?;
        let n = ws.len() as f64;
        let mean = ws.iter().sum::<f64>() / n;
        let sd = (ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = sd / n.sqrt();
        if (mean - exact).abs() <= 4.0 * se.max(1e-12 * exact) {
            within += 1;
        }
    }
    let rate = within as f64 / instances as f64;
    Ok(SuiteReport {
        name: "oracle-equivalence",
        passed: rate >= 0.95,
        detail: format!("{within} of {instances} within 4 standard errors"),
    })
}

/// Largest norm-relative gap between the analytic and central-difference
/// gradient at `theta`.
pub fn gradient_gap(data: &Dataset, theta: &Theta, crn: &CrnBlock, theta0: &Theta) -> Result<f64> {
    let layout = data.layout();
    let analytic = grad_loglik(data, theta, crn, theta0, DrawOrder::Index)?;
    let flat = layout.flatten(theta)?;
    let h = 1e-5;
    let mut fd = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let mut up = flat.clone();
        up[i] += h;
        let mut down = flat.clone();
        down[i] -= h;
        let fu = simulated_loglik(data, &layout.unflatten(&up)?, crn, theta0, DrawOrder::Index)?;
        let fdn = simulated_loglik(data, &layout.unflatten(&down)?, crn, theta0, DrawOrder::Index)?;
        fd[i] = (fu - fdn) / (2.0 * h);
    }
    let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(diff / norm.max(1.0))
}

pub fn gradient_check(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 4));
    let points = scaled(opts.level, 8, 20);
    let mut worst: f64 = 0.0;
    for i in 0..points {
        let kind = [GameKind::PeerEffectsMean, GameKind::PeerEffectsCount, GameKind::DirectedNetworkSupport][i % 3];
        let inst = random_instance(&mut rng, kind, 4)?;
        let data = Dataset::single(inst.model.clone(), inst.target.clone())?;
        let crn = CrnBlock::new(rng.next_u64(), 5)?;
        let layout = data.layout();
        let mut flat = layout.flatten(&inst.theta)?;
        for v in flat.iter_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        for j in layout.delta_range() {
            flat[j] = flat[j].abs() + 0.05;
        }
        let theta = layout.unflatten(&flat)?;
        worst = worst.max(gradient_gap(&data, &theta, &crn, &inst.theta)?);
    }
    Ok(SuiteReport { name: "gradient", passed: worst <= 1e-5, detail: format!("max relative gap {worst:e}") })
}

/// Partially drawn shocks as the threshold finder sees them at step `k`
/// of the active coordinates: inactive and earlier active draws kept,
/// later active coordinates at `-inf`.
pub fn partial_shocks(model: &GameModel, target: &ActionProfile, u: &[f64], k: usize) -> (ShockMatrix, usize) {
    let active: Vec<usize> = (0..u.len()).filter(|&c| target.as_slice()[c]).collect();
    let mut partial = u.to_vec();
    for &c in &active[k..] {
        partial[c] = f64::NEG_INFINITY;
    }
    (ShockMatrix::new(model.players(), model.actions(), partial).expect("shape matches"), active[k])
}

pub fn threshold_agreement(opts: &ValidateOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, 5));
    let configs = scaled(opts.level, 100, 500);
    let kinds = [
        GameKind::Coordination,
        GameKind::PeerEffectsMean,
        GameKind::PeerEffectsCount,
        GameKind::DirectedNetworkSupport,
        GameKind::MultiActionPeer,
    ];
    let (mut done, mut worst) = (0, 0.0f64);
    while done < configs {
        let kind = kinds[done % kinds.len()];
        let players = if kind == GameKind::Coordination { 2 } else { rng.random_range(3..=5) };
        let inst = random_instance(&mut rng, kind, players)?;
        let ones = inst.target.count_ones();
        if ones == 0 {
            continue;
        }
        let u = uniforms(&mut rng, inst.model.coords());
        let draw = sample_scenario(&inst.model, &inst.theta, &inst.target, &u, DrawOrder::Index)?;
        let k = rng.random_range(0..ones);
        let (partial, c) = partial_shocks(&inst.model, &inst.target, draw.u.as_slice(), k);
        let (t, m) = inst.model.split(c);
        let h = find_threshold(&inst.model, &inst.theta, &partial, t, m)?;
        let b = threshold_bisection(&inst.model, &inst.theta, &partial, t, m)?;
        worst = worst.max((h - b).abs());
        done += 1;
    }
    Ok(SuiteReport { name: "threshold", passed: worst <= 1e-9, detail: format!("max |finder - bisection| = {worst:e} over {configs}") })
}

pub fn run_all(opts: &ValidateOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        sampler_validity(opts)?,
        lambda_normalization(opts)?,
        oracle_equivalence(opts)?,
        gradient_check(opts)?,
        threshold_agreement(opts)?,
    ])
}
