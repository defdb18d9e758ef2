//! Brute-force ground truth for small games.
//!
//! Everything here is exponential in the number of coordinates and meant
//! for cross-checking the sampler and likelihood on tiny instances. Play is
//! constant within a scenario, so evaluating the minimal equilibrium at one
//! interior point per scenario is exact.

use crate::equil::{jacobi_step, least_fixed_point, ShockMatrix};
use crate::error::{Error, Result};
use crate::model::{ActionProfile, GameModel, Payoffs, Theta};
use crate::sampler::{replay_log_lambda, scenario_log_zeta, Bucket, DrawOrder, Scenario};

pub const MAX_SCENARIOS: usize = 1_000_000;

/// Largest `T * M` accepted by [`enumerate_fixed_points`].
pub const MAX_FIXED_POINT_COORDS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedScenario {
    pub scenario: Scenario,
    /// An interior shock vector of the scenario.
    pub representative: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactLikelihood {
    pub probability: f64,
    /// Number of scenarios whose minimal equilibrium is the target.
    pub scenarios: usize,
}

/// Per-coordinate buckets with a representative point each.
fn coordinate_buckets(p: &Payoffs<'_>, c: usize) -> Vec<(Bucket, f64)> {
    let n = p.model().level_count(c) as u32;
    let mut levels: Vec<(f64, u32)> = (0..n).map(|l| (p.utility_at_level(c, l), l)).collect();
    levels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    levels.dedup_by(|later, earlier| later.0 == earlier.0);
    let mut out = Vec::with_capacity(levels.len() + 1);
    let (first, last) = (levels[0], levels[levels.len() - 1]);
    out.push((Bucket { lower: None, upper: Some(first.1) }, first.0 - 1.0));
    for w in levels.windows(2) {
        out.push((Bucket { lower: Some(w[0].1), upper: Some(w[1].1) }, 0.5 * (w[0].0 + w[1].0)));
    }
    out.push((Bucket { lower: Some(last.1), upper: None }, last.0 + 1.0));
    out
}

/// Visit every scenario of the partition at `theta`.
pub fn for_each_scenario(model: &GameModel, theta: &Theta, mut f: impl FnMut(&Scenario, &[f64])) -> Result<()> {
    let p = Payoffs::unchecked(model, theta)?;
    model.check_levels()?;
    let per_coord: Vec<Vec<(Bucket, f64)>> = (0..model.coords()).map(|c| coordinate_buckets(&p, c)).collect();
    let count: f64 = per_coord.iter().map(|b| b.len() as f64).product();
    if count > MAX_SCENARIOS as f64 {
        return Err(Error::TooManyScenarios { count, limit: MAX_SCENARIOS });
    }
    let n = per_coord.len();
    let mut digits = vec![0usize; n];
    let mut scenario = Scenario { buckets: per_coord.iter().map(|b| b[0].0).collect() };
    let mut rep: Vec<f64> = per_coord.iter().map(|b| b[0].1).collect();
    loop {
        f(&scenario, &rep);
        let mut i = 0;
        loop {
            if i == n {
                return Ok(());
            }
            digits[i] += 1;
            if digits[i] < per_coord[i].len() {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        for j in 0..=i.min(n - 1) {
            let (b, r) = per_coord[j][digits[j]];
            scenario.buckets[j] = b;
            rep[j] = r;
        }
    }
}

pub fn enumerate_scenarios(model: &GameModel, theta: &Theta) -> Result<Vec<EnumeratedScenario>> {
    let mut out = Vec::new();
    for_each_scenario(model, theta, |s, r| out.push(EnumeratedScenario { scenario: s.clone(), representative: r.to_vec() }))?;
    Ok(out)
}

/// Scenarios whose minimal equilibrium is `target`.
pub fn consistent_scenarios(model: &GameModel, theta: &Theta, target: &ActionProfile) -> Result<Vec<EnumeratedScenario>> {
    let p = Payoffs::new(model, theta)?;
    let mut out = Vec::new();
    for_each_scenario(model, theta, |s, r| {
        if least_fixed_point(&p, r).0 == target.as_slice() {
            out.push(EnumeratedScenario { scenario: s.clone(), representative: r.to_vec() });
        }
    })?;
    Ok(out)
}

/// Likelihood of `target` as the total shock mass of its scenarios.
pub fn exact_likelihood(model: &GameModel, theta: &Theta, target: &ActionProfile) -> Result<ExactLikelihood> {
    if target.players() != model.players() || target.actions() != model.actions() {
        return Err(Error::DimensionMismatch("target shape differs from game".into()));
    }
    let p = Payoffs::new(model, theta)?;
    let mut probability = 0.0;
    let mut scenarios = 0;
    for_each_scenario(model, theta, |s, r| {
        if least_fixed_point(&p, r).0 == target.as_slice() {
            probability += scenario_log_zeta(&p, s).exp();
            scenarios += 1;
        }
    })?;
    Ok(ExactLikelihood { probability, scenarios })
}

/// Log probability that the sampler at `theta0` produces the scenario with
/// representative `rep`; `None` outside the target's scenarios.
pub fn scenario_log_lambda(
    model: &GameModel,
    theta0: &Theta,
    target: &ActionProfile,
    order: DrawOrder,
    rep: &[f64],
) -> Result<Option<f64>> {
    if rep.len() != model.coords() {
        return Err(Error::DimensionMismatch("representative shock has the wrong length".into()));
    }
    let p = Payoffs::new(model, theta0)?;
    Ok(replay_log_lambda(&p, target.as_slice(), order, rep))
}

/// Largest shock at which coordinate `(t, m)` still acts in the minimal
/// equilibrium, by bisection on the shock with everything else in `u`
/// fixed.
pub fn threshold_bisection(model: &GameModel, theta: &Theta, u: &ShockMatrix, t: usize, m: usize) -> Result<f64> {
    if t >= model.players() || m >= model.actions() {
        return Err(Error::IndexOutOfRange(format!("({t}, {m})")));
    }
    let p = Payoffs::new(model, theta)?;
    let c = model.coord(t, m);
    let mut work = u.as_slice().to_vec();
    let mut acts = |x: f64| {
        work[c] = x;
        least_fixed_point(&p, &work).0[c]
    };
    let mut lo = p.utility_at_level(c, 0) - 1.0;
    let mut hi = p.max_utility(c) + 1.0;
    if !acts(lo) {
        return Err(Error::NoActionRegion { t, m });
    }
    if acts(hi) {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if acts(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// All pure Nash equilibria at shocks `u`, by scanning every profile.
pub fn enumerate_fixed_points(model: &GameModel, theta: &Theta, u: &ShockMatrix) -> Result<Vec<ActionProfile>> {
    let n = model.coords();
    if n > MAX_FIXED_POINT_COORDS {
        return Err(Error::InvalidArgument(format!("{n} coordinates exceed the fixed-point scan limit {MAX_FIXED_POINT_COORDS}")));
    }
    let p = Payoffs::unchecked(model, theta)?;
    let mut out = Vec::new();
    let mut y = vec![false; n];
    for bits in 0u32..1 << n {
        for (i, v) in y.iter_mut().enumerate() {
            *v = bits >> i & 1 == 1;
        }
        if jacobi_step(&p, u.as_slice(), &y) == y {
            out.push(ActionProfile::from_vec(model.players(), model.actions(), y.clone())?);
        }
    }
    Ok(out)
}
