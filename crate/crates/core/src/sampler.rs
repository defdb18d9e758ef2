//! Scenario sampler and threshold finder.
//!
//! A draw targets an observed profile `y`. Inactive coordinates get a shock
//! above their utility at `y`. Active coordinates are then drawn one by one
//! below a threshold: the utility at the minimal equilibrium of a
//! counterfactual in which the current coordinate never acts, earlier
//! active coordinates keep their draws and later ones always act. The
//! resulting shock vector has `y` as its minimal equilibrium, and every
//! scenario consistent with `y` is reachable.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::{log_interval_mass, sample_truncated, TruncationSide};
use crate::equil::{least_fixed_point, ShockMatrix};
use crate::error::{Error, Result};
use crate::model::{ActionProfile, GameModel, Payoffs, Theta};

/// Order in which coordinates are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrawOrder {
    /// Player-major, then action.
    #[default]
    Index,
    /// Active coordinates by ascending non-strategic utility at the
    /// sampling parameter.
    Sorted,
}

impl FromStr for DrawOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "index" => Ok(DrawOrder::Index),
            "sorted" => Ok(DrawOrder::Sorted),
            other => Err(Error::InvalidArgument(format!("unknown draw order '{other}'"))),
        }
    }
}

/// One coordinate's bucket `(b(lower), b(upper)]`, with boundaries given as
/// level indices; `None` stands for the infinite end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: Option<u32>,
    pub upper: Option<u32>,
}

impl Bucket {
    pub const UNBOUNDED: Bucket = Bucket { lower: None, upper: None };

    /// Boundary values at the bound parameter.
    pub fn bounds(&self, p: &Payoffs<'_>, c: usize) -> (f64, f64) {
        (self.lower.map_or(f64::NEG_INFINITY, |l| p.utility_at_level(c, l)), self.upper.map_or(f64::INFINITY, |l| p.utility_at_level(c, l)))
    }

    /// Log shock mass of the bucket; `-inf` if its boundaries have crossed.
    pub fn log_mass(&self, p: &Payoffs<'_>, c: usize) -> f64 {
        let (lo, hi) = self.bounds(p, c);
        if lo >= hi {
            return f64::NEG_INFINITY;
        }
        log_interval_mass(lo, hi, p.model().family()).unwrap_or(f64::NEG_INFINITY)
    }
}

/// One bucket per coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scenario {
    pub buckets: Vec<Bucket>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceDraw {
    pub u: ShockMatrix,
    pub log_omega: Vec<f64>,
    pub scenario: Scenario,
    pub log_lambda: f64,
    pub theta0: Theta,
}

/// Locate `u` among the boundaries of coordinate `c`.
pub(crate) fn locate_bucket(p: &Payoffs<'_>, c: usize, u: f64) -> Bucket {
    let n = p.model().level_count(c) as u32;
    if p.model().levels_ordered() {
        // boundaries are nondecreasing in the level index
        let first_at_or_above = partition_point(n, |l| p.utility_at_level(c, l) < u);
        Bucket { lower: first_at_or_above.checked_sub(1), upper: (first_at_or_above < n).then_some(first_at_or_above) }
    } else {
        let mut lower: Option<(f64, u32)> = None;
        let mut upper: Option<(f64, u32)> = None;
        for l in 0..n {
            let v = p.utility_at_level(c, l);
            if v < u {
                if lower.is_none_or(|(best, _)| v > best) {
                    lower = Some((v, l));
                }
            } else if upper.is_none_or(|(best, _)| v < best) {
                upper = Some((v, l));
            }
        }
        Bucket { lower: lower.map(|(_, l)| l), upper: upper.map(|(_, l)| l) }
    }
}

fn partition_point(n: u32, pred: impl Fn(u32) -> bool) -> u32 {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn locate_scenario(model: &GameModel, theta: &Theta, u: &ShockMatrix) -> Result<Scenario> {
    let p = Payoffs::unchecked(model, theta)?;
    model.check_levels()?;
    if u.players() != model.players() || u.actions() != model.actions() {
        return Err(Error::DimensionMismatch("shock matrix shape differs from game".into()));
    }
    Ok(Scenario { buckets: (0..model.coords()).map(|c| locate_bucket(&p, c, u.as_slice()[c])).collect() })
}

pub fn log_zeta(model: &GameModel, theta: &Theta, scenario: &Scenario) -> Result<f64> {
    let p = Payoffs::unchecked(model, theta)?;
    check_scenario(model, scenario)?;
    Ok(scenario_log_zeta(&p, scenario))
}

pub(crate) fn check_scenario(model: &GameModel, scenario: &Scenario) -> Result<()> {
    if scenario.buckets.len() != model.coords() {
        return Err(Error::DimensionMismatch(format!(
            "scenario has {} buckets, game has {} coordinates",
            scenario.buckets.len(),
            model.coords()
        )));
    }
    Ok(())
}

pub(crate) fn scenario_log_zeta(p: &Payoffs<'_>, scenario: &Scenario) -> f64 {
    let mut acc = 0.0;
    for (c, b) in scenario.buckets.iter().enumerate() {
        acc += b.log_mass(p, c);
        if acc == f64::NEG_INFINITY {
            break;
        }
    }
    acc
}

/// Recompute `log lambda` of a draw from its weights and its scenario at
/// the draw's sampling parameter.
pub fn log_lambda(model: &GameModel, draw: &ImportanceDraw) -> Result<f64> {
    let zeta = log_zeta(model, &draw.theta0, &draw.scenario)?;
    Ok(draw.log_omega.iter().sum::<f64>() + zeta)
}

/// Threshold for coordinate `(t, m)` given the partially drawn shocks `u`.
///
/// `u` must hold finished draws for inactive coordinates and for active
/// coordinates already drawn, and `-inf` for active coordinates still to
/// come. The entry at `(t, m)` itself is ignored.
pub fn find_threshold(model: &GameModel, theta: &Theta, u: &ShockMatrix, t: usize, m: usize) -> Result<f64> {
    if t >= model.players() || m >= model.actions() {
        return Err(Error::IndexOutOfRange(format!("({t}, {m})")));
    }
    if u.players() != model.players() || u.actions() != model.actions() {
        return Err(Error::DimensionMismatch("shock matrix shape differs from game".into()));
    }
    let p = Payoffs::new(model, theta)?;
    let mut work = u.as_slice().to_vec();
    Ok(threshold(&p, &mut work, model.coord(t, m)).0)
}

// Threshold and counterfactual profile; leaves `work[c]` at +inf.
fn threshold(p: &Payoffs<'_>, work: &mut [f64], c: usize) -> (f64, Vec<bool>) {
    work[c] = f64::INFINITY;
    let (y, level) = least_fixed_point(p, work);
    (p.utility_at_level(c, level[c]), y)
}

/// Coordinates in drawing order: inactive first, then active.
pub(crate) fn draw_sequence(p: &Payoffs<'_>, target: &[bool], order: DrawOrder) -> (Vec<usize>, Vec<usize>) {
    let inactive: Vec<usize> = (0..target.len()).filter(|&c| !target[c]).collect();
    let mut active: Vec<usize> = (0..target.len()).filter(|&c| target[c]).collect();
    if order == DrawOrder::Sorted {
        active.sort_by(|&a, &b| p.base(a).total_cmp(&p.base(b)));
    }
    (inactive, active)
}

/// Draw one importance sample for `target` at `theta0` from `uniforms`
/// (one per coordinate, strictly inside the unit interval).
pub fn sample_scenario(
    model: &GameModel,
    theta0: &Theta,
    target: &ActionProfile,
    uniforms: &[f64],
    order: DrawOrder,
) -> Result<ImportanceDraw> {
    if target.players() != model.players() || target.actions() != model.actions() {
        return Err(Error::DimensionMismatch("target shape differs from game".into()));
    }
    if uniforms.len() != model.coords() {
        return Err(Error::DimensionMismatch(format!("{} uniforms for {} coordinates", uniforms.len(), model.coords())));
    }
    let p = Payoffs::new(model, theta0)?;
    sample_with(&p, target.as_slice(), uniforms, order)
}

pub(crate) fn sample_with(p: &Payoffs<'_>, target: &[bool], uniforms: &[f64], order: DrawOrder) -> Result<ImportanceDraw> {
    let model = p.model();
    let family = model.family();
    let n = target.len();
    let mut u = vec![f64::NEG_INFINITY; n];
    let mut log_omega = vec![0.0; n];
    let (inactive, active) = draw_sequence(p, target, order);
    let degenerate = |c: usize, threshold: f64| {
        let (t, m) = model.split(c);
        Error::DegenerateTruncation { t, m, threshold }
    };

    for &c in &inactive {
        let g = p.utility(c, target);
        let log_tail = family.log_sf(g);
        if family.sf(g) < f64::MIN_POSITIVE {
            return Err(degenerate(c, g));
        }
        u[c] = sample_truncated(uniforms[c], g, TruncationSide::Above, family)?;
        log_omega[c] = -log_tail;
    }
    for &c in &active {
        let (h, _counterfactual) = threshold(p, &mut u, c);
        debug_assert!(_counterfactual.iter().zip(target).all(|(&a, &b)| !a || b));
        if family.cdf(h) < f64::MIN_POSITIVE {
            return Err(degenerate(c, h));
        }
        u[c] = sample_truncated(uniforms[c], h, TruncationSide::BelowOrEqual, family)?;
        log_omega[c] = -family.log_cdf(h);
    }

    let buckets: Vec<Bucket> = (0..n).map(|c| locate_bucket(p, c, u[c])).collect();
    let scenario = Scenario { buckets };
    let log_lambda = log_omega.iter().sum::<f64>() + scenario_log_zeta(p, &scenario);
    Ok(ImportanceDraw {
        u: ShockMatrix::new(model.players(), model.actions(), u)?,
        log_omega,
        scenario,
        log_lambda,
        theta0: p.theta().clone(),
    })
}

/// Probability (log) that the sampler lands in the scenario containing
/// `u`, obtained by running the sampler's steps with `u` in place of
/// random draws. `None` when some coordinate of `u` falls outside the
/// region the sampler would truncate to, i.e. the scenario is not
/// consistent with `target`.
pub(crate) fn replay_log_lambda(p: &Payoffs<'_>, target: &[bool], order: DrawOrder, u: &[f64]) -> Option<f64> {
    let model = p.model();
    let family = model.family();
    let n = target.len();
    let mut work = vec![f64::NEG_INFINITY; n];
    let mut log_lambda = 0.0;
    let (inactive, active) = draw_sequence(p, target, order);
    for &c in &inactive {
        let g = p.utility(c, target);
        if u[c] <= g {
            return None;
        }
        work[c] = u[c];
        log_lambda -= family.log_sf(g);
    }
    for &c in &active {
        let (h, _) = threshold(p, &mut work, c);
        if u[c] > h {
            return None;
        }
        work[c] = u[c];
        log_lambda -= family.log_cdf(h);
    }
    let scenario = Scenario { buckets: (0..n).map(|c| locate_bucket(p, c, u[c])).collect() };
    Some(log_lambda + scenario_log_zeta(p, &scenario))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game() -> (GameModel, Theta) {
        (GameModel::coordination([vec![0.0], vec![0.0]]).unwrap(), Theta::scalar(vec![0.0], 1.0))
    }

    #[test]
    fn locate_respects_right_closed_buckets() {
        let (g, th) = game();
        let at = |a: f64, b: f64| locate_scenario(&g, &th, &ShockMatrix::new(2, 1, vec![a, b]).unwrap()).unwrap();
        let s = at(-0.3, -0.3);
        assert_eq!(s.buckets[0], Bucket { lower: None, upper: Some(0) });
        let s = at(0.4, 1.7);
        assert_eq!(s.buckets[0], Bucket { lower: Some(0), upper: Some(1) });
        assert_eq!(s.buckets[1], Bucket { lower: Some(1), upper: None });
        // a shock on a boundary belongs to the bucket it closes
        let s = at(0.0, 1.0);
        assert_eq!(s.buckets[0], Bucket { lower: None, upper: Some(0) });
        assert_eq!(s.buckets[1], Bucket { lower: Some(0), upper: Some(1) });
    }

    #[test]
    fn unbounded_scenario_has_full_mass() {
        let (g, th) = game();
        let s = Scenario { buckets: vec![Bucket::UNBOUNDED; 2] };
        assert_eq!(log_zeta(&g, &th, &s).unwrap(), 0.0);
    }

    #[test]
    fn inactive_target_only_uses_phase_one() {
        let (g, th) = game();
        let y = ActionProfile::zeros(2, 1);
        let d = sample_scenario(&g, &th, &y, &[0.3, 0.9], DrawOrder::Index).unwrap();
        assert!(d.u.as_slice().iter().all(|&v| v > 0.0));
        let expected = 2.0 * 0.5f64.ln();
        let zeta = log_zeta(&g, &th, &d.scenario).unwrap();
        assert!((d.log_lambda - (zeta - expected)).abs() < 1e-14);
    }

    #[test]
    fn draw_order_parses() {
        assert_eq!("sorted".parse::<DrawOrder>().unwrap(), DrawOrder::Sorted);
        assert!("random".parse::<DrawOrder>().is_err());
    }
}
