//! Equilibrium computation by monotone best-response iteration.

use crate::error::{Error, Result};
use crate::model::{ActionProfile, GameModel, Payoffs, Theta};

/// Shock realizations, one per coordinate. Infinite entries are allowed and
/// act as "always active" (`-inf`) or "never active" (`+inf`).
#[derive(Clone, Debug, PartialEq)]
pub struct ShockMatrix {
    players: usize,
    actions: usize,
    u: Vec<f64>,
}

impl ShockMatrix {
    pub fn new(players: usize, actions: usize, u: Vec<f64>) -> Result<Self> {
        if u.len() != players * actions {
            return Err(Error::DimensionMismatch(format!("{} shocks for {players} x {actions} coordinates", u.len())));
        }
        if let Some(i) = u.iter().position(|v| v.is_nan()) {
            return Err(Error::InvalidArgument(format!("NaN shock at coordinate {i}")));
        }
        Ok(ShockMatrix { players, actions, u })
    }

    pub fn filled(players: usize, actions: usize, value: f64) -> Result<Self> {
        Self::new(players, actions, vec![value; players * actions])
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.u[t * self.actions + m]
    }

    pub fn set(&mut self, t: usize, m: usize, value: f64) {
        self.u[t * self.actions + m] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.u
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.u
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.u
    }
}

fn check_shape(model: &GameModel, u: &ShockMatrix) -> Result<()> {
    if u.players != model.players() || u.actions != model.actions() {
        return Err(Error::DimensionMismatch(format!(
            "shocks are {} x {}, game is {} x {}",
            u.players,
            u.actions,
            model.players(),
            model.actions()
        )));
    }
    Ok(())
}

/// Simultaneous best response to `y`.
pub fn best_response(model: &GameModel, theta: &Theta, u: &ShockMatrix, y: &ActionProfile) -> Result<ActionProfile> {
    check_shape(model, u)?;
    let p = Payoffs::unchecked(model, theta)?;
    if y.players() != model.players() || y.actions() != model.actions() {
        return Err(Error::DimensionMismatch("profile shape differs from game".into()));
    }
    let next = jacobi_step(&p, u.as_slice(), y.as_slice());
    ActionProfile::from_vec(model.players(), model.actions(), next)
}

pub fn minimal_ne(model: &GameModel, theta: &Theta, u: &ShockMatrix) -> Result<ActionProfile> {
    check_shape(model, u)?;
    let p = Payoffs::new(model, theta)?;
    let (y, _) = least_fixed_point(&p, u.as_slice());
    debug_assert!(
        model.coords() > 64 || jacobi(&p, u.as_slice(), false).map(|r| r == y).unwrap_or(false),
        "worklist and sweep equilibria differ"
    );
    ActionProfile::from_vec(model.players(), model.actions(), y)
}

pub fn maximal_ne(model: &GameModel, theta: &Theta, u: &ShockMatrix) -> Result<ActionProfile> {
    check_shape(model, u)?;
    let p = Payoffs::new(model, theta)?;
    let y = jacobi(&p, u.as_slice(), true)?;
    ActionProfile::from_vec(model.players(), model.actions(), y)
}

pub fn is_ne(model: &GameModel, theta: &Theta, u: &ShockMatrix, y: &ActionProfile) -> Result<bool> {
    Ok(best_response(model, theta, u, y)? == *y)
}

pub(crate) fn jacobi_step(p: &Payoffs<'_>, u: &[f64], y: &[bool]) -> Vec<bool> {
    (0..u.len()).map(|c| p.utility(c, y) >= u[c]).collect()
}

/// Simultaneous best-response sweeps from all-zeros (or all-ones), at most
/// `TM + 1` of them.
pub(crate) fn jacobi(p: &Payoffs<'_>, u: &[f64], from_top: bool) -> Result<Vec<bool>> {
    let mut y = vec![from_top; u.len()];
    let limit = u.len() + 1;
    for _ in 0..limit {
        let next = jacobi_step(p, u, &y);
        if next == y {
            return Ok(y);
        }
        y = next;
    }
    Err(Error::NonConvergence { sweeps: limit })
}

/// Least fixed point of the best-response map by a monotone worklist.
///
/// Starting from all-zeros, a coordinate switches on once its utility at
/// the current profile reaches its shock; each switch raises the level
/// index of the coordinates it affects and re-queues them. With
/// nonnegative strategic parameters no coordinate ever needs to switch
/// off, so the result equals the limit of the sweeps. Returns the profile
/// and every coordinate's level index at it.
pub(crate) fn least_fixed_point(p: &Payoffs<'_>, u: &[f64]) -> (Vec<bool>, Vec<u32>) {
    let n = u.len();
    let mut y = vec![false; n];
    let mut level = vec![0u32; n];
    let mut queue: Vec<usize> = (0..n).filter(|&c| p.utility_at_level(c, 0) >= u[c]).collect();
    let model = p.model();
    while let Some(c) = queue.pop() {
        if y[c] {
            continue;
        }
        y[c] = true;
        model.for_each_increment(c, &y, |i, w| {
            level[i] += w;
            if !y[i] && p.utility_at_level(i, level[i]) >= u[i] {
                queue.push(i);
            }
        });
    }
    (y, level)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game() -> (GameModel, Theta) {
        (GameModel::coordination([vec![0.0], vec![0.0]]).unwrap(), Theta::scalar(vec![0.0], 1.0))
    }

    fn profile(bits: &[bool]) -> ActionProfile {
        ActionProfile::from_vec(bits.len(), 1, bits.to_vec()).unwrap()
    }

    #[test]
    fn infinite_shocks() {
        let (g, th) = game();
        let top = ShockMatrix::filled(2, 1, f64::INFINITY).unwrap();
        let bottom = ShockMatrix::filled(2, 1, f64::NEG_INFINITY).unwrap();
        let any = profile(&[true, false]);
        assert_eq!(best_response(&g, &th, &top, &any).unwrap(), profile(&[false, false]));
        assert_eq!(best_response(&g, &th, &bottom, &any).unwrap(), profile(&[true, true]));
        assert_eq!(maximal_ne(&g, &th, &top).unwrap(), profile(&[false, false]));
        assert!(is_ne(&g, &th, &top, &profile(&[false, false])).unwrap());
    }

    #[test]
    fn coordination_multiplicity() {
        let (g, th) = game();
        let u = ShockMatrix::new(2, 1, vec![0.5, 0.5]).unwrap();
        assert_eq!(best_response(&g, &th, &u, &profile(&[true, true])).unwrap(), profile(&[true, true]));
        assert_eq!(minimal_ne(&g, &th, &u).unwrap(), profile(&[false, false]));
        assert_eq!(maximal_ne(&g, &th, &u).unwrap(), profile(&[true, true]));
        assert!(!is_ne(&g, &th, &u, &profile(&[true, false])).unwrap());
        let low = ShockMatrix::new(2, 1, vec![-0.1, -0.1]).unwrap();
        assert_eq!(minimal_ne(&g, &th, &low).unwrap(), profile(&[true, true]));
    }

    #[test]
    fn negative_delta_cycles() {
        let g = GameModel::coordination([vec![0.0], vec![0.0]]).unwrap();
        let th = Theta::scalar(vec![0.0], -1.0);
        let p = Payoffs::unchecked(&g, &th).unwrap();
        let u = [-0.5, -0.5];
        assert!(matches!(jacobi(&p, &u, false), Err(Error::NonConvergence { sweeps: 3 })));
        assert!(minimal_ne(&g, &th, &ShockMatrix::new(2, 1, u.to_vec()).unwrap()).is_err());
    }
}
