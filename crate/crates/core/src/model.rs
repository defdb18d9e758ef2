//! Game definitions.
//!
//! A coordinate `c = t * M + m` indexes player `t`'s action `m`. Each
//! coordinate's strategic statistic takes finitely many values, its
//! *levels*, which are addressed by a dense index. Every utility value the
//! crate computes goes through [`Payoffs::utility_at_level`], so a
//! threshold read off a counterfactual equilibrium and a bucket boundary
//! for the same level are bitwise equal.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dist::ShockFamily;
use crate::error::{Error, Result};

pub const DEFAULT_LEVEL_CAP: usize = 4096;

/// Largest `T * M` for which [`GameModel::check_supermodular`] scans all profiles.
pub const BRUTE_FORCE_COORDS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameKind {
    /// Two players, one action; the statistic is the opponent's action.
    Coordination,
    /// One action; the statistic is the fraction of active peers.
    PeerEffectsMean,
    /// One action; the statistic is the number of active peers.
    PeerEffectsCount,
    /// `M` actions; the statistic for action `m` is the number of the
    /// player's other active actions followed by the fraction of peers
    /// active in each action.
    MultiActionPeer,
    /// Directed links, `M = T - 1`; the statistic for arc `(t, s)` is the
    /// number of agents linking to both `t` and `s`.
    DirectedNetworkSupport,
    /// Directed links; the statistic for arc `(t, s)` is the reciprocal arc
    /// `y_st` and the number of two-paths `t -> r -> s`.
    DirectedNetworkReciprocity,
}

impl GameKind {
    pub fn is_network(self) -> bool {
        matches!(self, GameKind::DirectedNetworkSupport | GameKind::DirectedNetworkReciprocity)
    }
}

/// Peer structure: `peers[t]` are the agents whose play enters `t`'s
/// statistic, `audience[s]` the agents whose statistic contains `s`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Network {
    peers: Vec<Vec<usize>>,
    audience: Vec<Vec<usize>>,
}

impl Network {
    /// Build from directed pairs `(t, s)` meaning `s` is a peer of `t`.
    pub fn from_pairs(players: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut peers = vec![Vec::new(); players];
        for (t, s) in pairs {
            if t >= players || s >= players {
                return Err(Error::IndexOutOfRange(format!("link ({t}, {s}) with {players} players")));
            }
            if t == s {
                return Err(Error::InvalidArgument(format!("self-link at ({t}, {t})")));
            }
            peers[t].push(s);
        }
        Ok(Self::from_peer_lists(peers))
    }

    /// Build from a dense matrix; any nonzero entry is a link.
    pub fn from_dense(matrix: &[Vec<f64>]) -> Result<Self> {
        let n = matrix.len();
        let mut pairs = Vec::new();
        for (t, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch(format!("adjacency row {t} has {} entries, expected {n}", row.len())));
            }
            for (s, &v) in row.iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("adjacency entry ({t}, {s}) = {v}")));
                }
                if v != 0.0 {
                    if s == t {
                        return Err(Error::InvalidArgument(format!("nonzero diagonal at ({t}, {t})")));
                    }
                    pairs.push((t, s));
                }
            }
        }
        Self::from_pairs(n, pairs)
    }

    pub fn complete(players: usize) -> Self {
        let peers = (0..players).map(|t| (0..players).filter(|&s| s != t).collect()).collect();
        Self::from_peer_lists(peers)
    }

    fn from_peer_lists(mut peers: Vec<Vec<usize>>) -> Self {
        let mut audience = vec![Vec::new(); peers.len()];
        for (t, list) in peers.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            for &s in list.iter() {
                audience[s].push(t);
            }
        }
        Network { peers, audience }
    }

    pub fn players(&self) -> usize {
        self.peers.len()
    }

    pub fn peers(&self, t: usize) -> &[usize] {
        &self.peers[t]
    }

    pub fn audience(&self, s: usize) -> &[usize] {
        &self.audience[s]
    }

    pub fn degree(&self, t: usize) -> usize {
        self.peers[t].len()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.players()).all(|t| self.peers[t].iter().all(|&s| self.peers[s].binary_search(&t).is_ok()))
    }

    pub fn link_count(&self) -> usize {
        self.peers.iter().map(Vec::len).sum()
    }
}

/// A pure strategy profile, stored row-major by coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionProfile {
    players: usize,
    actions: usize,
    y: Vec<bool>,
}

impl ActionProfile {
    pub fn zeros(players: usize, actions: usize) -> Self {
        ActionProfile { players, actions, y: vec![false; players * actions] }
    }

    pub fn ones(players: usize, actions: usize) -> Self {
        ActionProfile { players, actions, y: vec![true; players * actions] }
    }

    pub fn from_vec(players: usize, actions: usize, y: Vec<bool>) -> Result<Self> {
        if y.len() != players * actions {
            return Err(Error::DimensionMismatch(format!("profile has {} entries, expected {players} x {actions}", y.len())));
        }
        Ok(ActionProfile { players, actions, y })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, t: usize, m: usize) -> bool {
        self.y[t * self.actions + m]
    }

    pub fn set(&mut self, t: usize, m: usize, value: bool) {
        self.y[t * self.actions + m] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.y
    }

    pub fn count_ones(&self) -> usize {
        self.y.iter().filter(|&&v| v).count()
    }

    /// Elementwise `self <= other`.
    pub fn le(&self, other: &ActionProfile) -> bool {
        self.y.len() == other.y.len() && self.y.iter().zip(&other.y).all(|(&a, &b)| !a || b)
    }
}

/// Payoff parameters.
///
/// `beta` and `delta` hold one block per action type: a single block except
/// for [`GameKind::MultiActionPeer`], which has one per action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sender_effects: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver_effects: Option<Vec<f64>>,
}

impl Theta {
    /// Single action type with a scalar strategic parameter.
    pub fn scalar(beta: Vec<f64>, delta: f64) -> Self {
        Theta { beta: vec![beta], delta: vec![vec![delta]], sender_effects: None, receiver_effects: None }
    }

    pub fn with_effects(mut self, sender: Vec<f64>, receiver: Vec<f64>) -> Self {
        self.sender_effects = Some(sender);
        self.receiver_effects = Some(receiver);
        self
    }
}

/// Flat parameter ordering: beta blocks, delta blocks, sender effects,
/// receiver effects.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub n_covariates: usize,
    pub blocks: usize,
    pub delta_dim: usize,
    pub effects: Option<usize>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.blocks * (self.n_covariates + self.delta_dim) + 2 * self.effects.unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn beta_offset(&self, block: usize) -> usize {
        block * self.n_covariates
    }

    pub fn delta_offset(&self, block: usize) -> usize {
        self.blocks * self.n_covariates + block * self.delta_dim
    }

    pub fn delta_range(&self) -> std::ops::Range<usize> {
        let start = self.delta_offset(0);
        start..start + self.blocks * self.delta_dim
    }

    pub fn sender_offset(&self) -> Option<usize> {
        self.effects.map(|_| self.blocks * (self.n_covariates + self.delta_dim))
    }

    pub fn receiver_offset(&self) -> Option<usize> {
        self.effects.map(|t| self.blocks * (self.n_covariates + self.delta_dim) + t)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        for b in 0..self.blocks {
            for k in 0..self.n_covariates {
                names.push(if self.blocks == 1 { format!("beta{}", k + 1) } else { format!("beta{}_{}", b + 1, k + 1) });
            }
        }
        for b in 0..self.blocks {
            for k in 0..self.delta_dim {
                names.push(match (self.blocks, self.delta_dim) {
                    (1, 1) => "delta".to_string(),
                    (1, _) => format!("delta{}", k + 1),
                    _ => format!("delta{}_{}", b + 1, k + 1),
                });
            }
        }
        if let Some(t) = self.effects {
            names.extend((0..t).map(|i| format!("sender{i}")));
            names.extend((0..t).map(|i| format!("receiver{i}")));
        }
        names
    }

    pub fn flatten(&self, theta: &Theta) -> Result<Vec<f64>> {
        self.check(theta)?;
        let mut out = Vec::with_capacity(self.len());
        theta.beta.iter().for_each(|b| out.extend_from_slice(b));
        theta.delta.iter().for_each(|d| out.extend_from_slice(d));
        if self.effects.is_some() {
            out.extend_from_slice(theta.sender_effects.as_deref().unwrap_or_default());
            out.extend_from_slice(theta.receiver_effects.as_deref().unwrap_or_default());
        }
        Ok(out)
    }

    pub fn unflatten(&self, flat: &[f64]) -> Result<Theta> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch(format!("parameter vector has {} entries, expected {}", flat.len(), self.len())));
        }
        let k = self.n_covariates;
        let beta = (0..self.blocks).map(|b| flat[b * k..(b + 1) * k].to_vec()).collect();
        let d0 = self.delta_offset(0);
        let delta = (0..self.blocks).map(|b| flat[d0 + b * self.delta_dim..d0 + (b + 1) * self.delta_dim].to_vec()).collect();
        let (sender_effects, receiver_effects) = match self.effects {
            Some(t) => {
                let s = self.sender_offset().unwrap_or_default();
                (Some(flat[s..s + t].to_vec()), Some(flat[s + t..s + 2 * t].to_vec()))
            }
            None => (None, None),
        };
        Ok(Theta { beta, delta, sender_effects, receiver_effects })
    }

    pub fn check(&self, theta: &Theta) -> Result<()> {
        if theta.beta.len() != self.blocks || theta.delta.len() != self.blocks {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} beta and {} delta blocks, model needs {}",
                theta.beta.len(),
                theta.delta.len(),
                self.blocks
            )));
        }
        for (b, beta) in theta.beta.iter().enumerate() {
            if beta.len() != self.n_covariates {
                return Err(Error::DimensionMismatch(format!(
                    "beta block {b} has length {}, model has {} covariates",
                    beta.len(),
                    self.n_covariates
                )));
            }
        }
        for (b, delta) in theta.delta.iter().enumerate() {
            if delta.len() != self.delta_dim {
                return Err(Error::DimensionMismatch(format!(
                    "delta block {b} has length {}, statistic has dimension {}",
                    delta.len(),
                    self.delta_dim
                )));
            }
        }
        let effect_ok = |v: &Option<Vec<f64>>| match (self.effects, v) {
            (None, None) => true,
            (Some(t), Some(v)) => v.len() == t,
            _ => false,
        };
        if !effect_ok(&theta.sender_effects) || !effect_ok(&theta.receiver_effects) {
            return Err(Error::DimensionMismatch(match self.effects {
                Some(t) => format!("model needs sender and receiver effects of length {t}"),
                None => "model has no sender/receiver effects".into(),
            }));
        }
        Ok(())
    }
}

/// Where supermodularity fails.
#[derive(Clone, Debug, PartialEq)]
pub enum SupermodularityViolation {
    NegativeDelta {
        block: usize,
        component: usize,
        value: f64,
    },
    /// Turning on coordinate `raised` lowers the utility of `affected` at `profile`.
    IncreasingDifferences {
        affected: (usize, usize),
        raised: (usize, usize),
        profile: Vec<bool>,
    },
}

impl fmt::Display for SupermodularityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SupermodularityViolation::NegativeDelta { block, component, value } => {
                write!(f, "delta block {block} component {component} is {value} < 0")
            }
            SupermodularityViolation::IncreasingDifferences { affected, raised, profile } => {
                let bits: String = profile.iter().map(|&b| if b { '1' } else { '0' }).collect();
                write!(f, "raising {raised:?} lowers the utility of {affected:?} at profile {bits}")
            }
        }
    }
}

/// A game: players, actions, covariates, peer structure and shock law.
#[derive(Clone, Debug, PartialEq)]
pub struct GameModel {
    kind: GameKind,
    players: usize,
    actions: usize,
    n_covariates: usize,
    covariates: Vec<f64>,
    network: Option<Network>,
    effects: bool,
    family: ShockFamily,
    level_cap: usize,
}

impl GameModel {
    /// General constructor. `covariates` is row-major over coordinates,
    /// `T * M * K` values.
    pub fn new(
        kind: GameKind,
        players: usize,
        actions: usize,
        n_covariates: usize,
        covariates: Vec<f64>,
        network: Option<Network>,
        effects: bool,
    ) -> Result<Self> {
        if players == 0 || actions == 0 {
            return Err(Error::InvalidArgument("a game needs at least one player and one action".into()));
        }
        match kind {
            GameKind::Coordination if players != 2 || actions != 1 => {
                return Err(Error::InvalidArgument("coordination game has two players with one action each".into()))
            }
            GameKind::PeerEffectsMean | GameKind::PeerEffectsCount if actions != 1 => {
                return Err(Error::InvalidArgument("peer-effects games have one action per player".into()))
            }
            k if k.is_network() && (players < 2 || actions != players - 1) => {
                return Err(Error::InvalidArgument("network games need T >= 2 and M = T - 1".into()))
            }
            _ => {}
        }
        if effects && !kind.is_network() {
            return Err(Error::InvalidArgument("sender/receiver effects apply to network games only".into()));
        }
        if covariates.len() != players * actions * n_covariates {
            return Err(Error::DimensionMismatch(format!(
                "{} covariate values for {players} x {actions} coordinates with {n_covariates} covariates",
                covariates.len()
            )));
        }
        if let Some(i) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite covariate at flat index {i}")));
        }
        let network = match kind {
            GameKind::PeerEffectsMean | GameKind::PeerEffectsCount => {
                Some(network.ok_or_else(|| Error::InvalidArgument("peer-effects games need an adjacency matrix".into()))?)
            }
            GameKind::MultiActionPeer => Some(network.unwrap_or_else(|| Network::complete(players))),
            _ => {
                if network.is_some() {
                    return Err(Error::InvalidArgument(format!("{kind:?} does not take an adjacency matrix")));
                }
                None
            }
        };
        if let Some(net) = &network {
            if net.players() != players {
                return Err(Error::DimensionMismatch(format!("adjacency has {} players, game has {players}", net.players())));
            }
        }
        Ok(GameModel {
            kind,
            players,
            actions,
            n_covariates,
            covariates,
            network,
            effects,
            family: ShockFamily::Normal,
            level_cap: DEFAULT_LEVEL_CAP,
        })
    }

    /// Two-player coordination game; `x` holds one covariate row per player.
    pub fn coordination(x: [Vec<f64>; 2]) -> Result<Self> {
        let k = x[0].len();
        if x[1].len() != k {
            return Err(Error::DimensionMismatch("covariate rows differ in length".into()));
        }
        Self::new(GameKind::Coordination, 2, 1, k, x.concat(), None, false)
    }

    pub fn peer_effects_mean(x: &[Vec<f64>], network: Network) -> Result<Self> {
        let (k, flat) = flatten_rows(x)?;
        Self::new(GameKind::PeerEffectsMean, x.len(), 1, k, flat, Some(network), false)
    }

    pub fn peer_effects_count(x: &[Vec<f64>], network: Network) -> Result<Self> {
        let (k, flat) = flatten_rows(x)?;
        Self::new(GameKind::PeerEffectsCount, x.len(), 1, k, flat, Some(network), false)
    }

    /// `x` holds one covariate row per coordinate `(t, m)`, row-major.
    pub fn multi_action_peer(players: usize, actions: usize, x: &[Vec<f64>], network: Option<Network>) -> Result<Self> {
        let (k, flat) = flatten_rows(x)?;
        Self::new(GameKind::MultiActionPeer, players, actions, k, flat, network, false)
    }

    /// `x` holds one dyadic covariate row per arc, ordered by coordinate.
    pub fn network_support(players: usize, x: &[Vec<f64>], effects: bool) -> Result<Self> {
        let (k, flat) = flatten_rows(x)?;
        Self::new(GameKind::DirectedNetworkSupport, players, players.saturating_sub(1), k, flat, None, effects)
    }

    pub fn network_reciprocity(players: usize, x: &[Vec<f64>], effects: bool) -> Result<Self> {
        let (k, flat) = flatten_rows(x)?;
        Self::new(GameKind::DirectedNetworkReciprocity, players, players.saturating_sub(1), k, flat, None, effects)
    }

    pub fn with_family(mut self, family: ShockFamily) -> Self {
        self.family = family;
        self
    }

    pub fn with_level_cap(mut self, cap: usize) -> Self {
        self.level_cap = cap;
        self
    }

    pub fn kind(&self) -> GameKind {
        self.kind
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn coords(&self) -> usize {
        self.players * self.actions
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn family(&self) -> ShockFamily {
        self.family
    }

    pub fn network(&self) -> Option<&Network> {
        self.network.as_ref()
    }

    pub fn has_effects(&self) -> bool {
        self.effects
    }

    pub fn covariates(&self, c: usize) -> &[f64] {
        &self.covariates[c * self.n_covariates..(c + 1) * self.n_covariates]
    }

    pub fn coord(&self, t: usize, m: usize) -> usize {
        t * self.actions + m
    }

    pub fn split(&self, c: usize) -> (usize, usize) {
        (c / self.actions, c % self.actions)
    }

    /// Target of action `m` for network games.
    pub fn dyad_target(&self, t: usize, m: usize) -> usize {
        if m < t {
            m
        } else {
            m + 1
        }
    }

    /// Coordinate of arc `t -> s` for network games.
    pub fn arc(&self, t: usize, s: usize) -> usize {
        t * self.actions + if s < t { s } else { s - 1 }
    }

    pub fn action_types(&self) -> usize {
        if self.kind == GameKind::MultiActionPeer {
            self.actions
        } else {
            1
        }
    }

    pub fn action_type(&self, c: usize) -> usize {
        if self.kind == GameKind::MultiActionPeer {
            c % self.actions
        } else {
            0
        }
    }

    pub fn statistic_dim(&self) -> usize {
        match self.kind {
            GameKind::MultiActionPeer => 1 + self.actions,
            GameKind::DirectedNetworkReciprocity => 2,
            _ => 1,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_covariates: self.n_covariates,
            blocks: self.action_types(),
            delta_dim: self.statistic_dim(),
            effects: self.effects.then_some(self.players),
        }
    }

    /// True when the strategic part of utility is a nondecreasing function
    /// of the level index for every nonnegative delta.
    pub fn levels_ordered(&self) -> bool {
        self.statistic_dim() == 1
    }

    fn check_indices(&self, t: usize, m: usize) -> Result<usize> {
        if t >= self.players || m >= self.actions {
            return Err(Error::IndexOutOfRange(format!("({t}, {m}) in a {} x {} game", self.players, self.actions)));
        }
        Ok(self.coord(t, m))
    }

    fn check_profile(&self, y: &ActionProfile) -> Result<()> {
        if y.players != self.players || y.actions != self.actions {
            return Err(Error::DimensionMismatch(format!(
                "profile is {} x {}, game is {} x {}",
                y.players, y.actions, self.players, self.actions
            )));
        }
        Ok(())
    }

    fn peer_count(&self, t: usize) -> usize {
        self.network.as_ref().map_or(0, |n| n.degree(t))
    }

    /// Number of feasible statistic values of coordinate `c`.
    pub fn level_count(&self, c: usize) -> usize {
        let (t, _) = self.split(c);
        match self.kind {
            GameKind::Coordination => 2,
            GameKind::PeerEffectsMean | GameKind::PeerEffectsCount => self.peer_count(t) + 1,
            GameKind::MultiActionPeer => {
                let radix = self.peer_count(t) + 1;
                (0..self.actions).fold(self.actions, |acc, _| acc.saturating_mul(radix))
            }
            GameKind::DirectedNetworkSupport => self.players - 1,
            GameKind::DirectedNetworkReciprocity => 2 * (self.players - 1),
        }
    }

    /// Fails with [`Error::FeasibleSetTooLarge`] when a coordinate has more
    /// levels than the cap.
    pub fn check_levels(&self) -> Result<()> {
        for c in 0..self.coords() {
            let size = self.level_count(c);
            if size > self.level_cap {
                let (t, m) = self.split(c);
                return Err(Error::FeasibleSetTooLarge { t, m, size, cap: self.level_cap });
            }
        }
        Ok(())
    }

    // Mixed-radix weight of the neighbor count for action `a` at player `t`.
    fn multi_weight(&self, t: usize, a: usize) -> u32 {
        let radix = (self.peer_count(t) + 1) as u32;
        self.actions as u32 * radix.pow(a as u32)
    }

    /// Writes the statistic vector of level `level` at coordinate `c`.
    pub fn level_statistic(&self, c: usize, level: u32, out: &mut Vec<f64>) {
        out.clear();
        let (t, _) = self.split(c);
        match self.kind {
            GameKind::PeerEffectsMean => out.push(mean_level(level, self.peer_count(t))),
            GameKind::MultiActionPeer => {
                let j = self.peer_count(t);
                let m = self.actions as u32;
                out.push((level % m) as f64);
                let mut rest = level / m;
                for _ in 0..self.actions {
                    let k = rest % (j as u32 + 1);
                    rest /= j as u32 + 1;
                    out.push(mean_level(k, j));
                }
            }
            GameKind::DirectedNetworkReciprocity => {
                out.push((level % 2) as f64);
                out.push((level / 2) as f64);
            }
            _ => out.push(level as f64),
        }
    }

    /// `s(level) . delta` without allocating.
    #[inline]
    pub fn level_dot(&self, c: usize, level: u32, delta: &[f64]) -> f64 {
        match self.kind {
            GameKind::PeerEffectsMean => mean_level(level, self.peer_count(c)) * delta[0],
            GameKind::MultiActionPeer => {
                let (t, _) = self.split(c);
                let j = self.peer_count(t) as u32;
                let m = self.actions as u32;
                let mut acc = (level % m) as f64 * delta[0];
                let mut rest = level / m;
                for d in &delta[1..] {
                    acc += mean_level(rest % (j + 1), j as usize) * d;
                    rest /= j + 1;
                }
                acc
            }
            GameKind::DirectedNetworkReciprocity => (level % 2) as f64 * delta[0] + (level / 2) as f64 * delta[1],
            _ => level as f64 * delta[0],
        }
    }

    /// Level index of the statistic of coordinate `c` at profile `y`.
    pub fn level_of(&self, c: usize, y: &[bool]) -> u32 {
        let (t, m) = self.split(c);
        let on = |cc: usize| y[cc] as u32;
        match self.kind {
            GameKind::Coordination => on(1 - t),
            GameKind::PeerEffectsMean | GameKind::PeerEffectsCount => {
                self.network.as_ref().map_or(0, |n| n.peers(t).iter().map(|&s| on(s)).sum())
            }
            GameKind::MultiActionPeer => {
                let own: u32 = (0..self.actions).filter(|&a| a != m).map(|a| on(self.coord(t, a))).sum();
                let peers = self.network.as_ref().map_or(&[][..], |n| n.peers(t));
                let mut level = own;
                for a in 0..self.actions {
                    let k: u32 = peers.iter().map(|&s| on(self.coord(s, a))).sum();
                    level += k * self.multi_weight(t, a);
                }
                level
            }
            GameKind::DirectedNetworkSupport => {
                let s = self.dyad_target(t, m);
                (0..self.players).filter(|&r| r != t && r != s).map(|r| on(self.arc(r, t)) * on(self.arc(r, s))).sum()
            }
            GameKind::DirectedNetworkReciprocity => {
                let s = self.dyad_target(t, m);
                let paths: u32 = (0..self.players).filter(|&r| r != t && r != s).map(|r| on(self.arc(t, r)) * on(self.arc(r, s))).sum();
                on(self.arc(s, t)) + 2 * paths
            }
        }
    }

    /// Calls `f(i, w)` for every coordinate `i` whose level index rises by
    /// `w` when coordinate `c` switches on. `y` is the profile after the
    /// switch.
    pub fn for_each_increment(&self, c: usize, y: &[bool], mut f: impl FnMut(usize, u32)) {
        let (a, m) = self.split(c);
        match self.kind {
            GameKind::Coordination => f(self.coord(1 - a, 0), 1),
            GameKind::PeerEffectsMean | GameKind::PeerEffectsCount => {
                if let Some(net) = &self.network {
                    net.audience(a).iter().for_each(|&i| f(i, 1));
                }
            }
            GameKind::MultiActionPeer => {
                for other in (0..self.actions).filter(|&o| o != m) {
                    f(self.coord(a, other), 1);
                }
                if let Some(net) = &self.network {
                    for &i in net.audience(a) {
                        let w = self.multi_weight(i, m);
                        for act in 0..self.actions {
                            f(self.coord(i, act), w);
                        }
                    }
                }
            }
            GameKind::DirectedNetworkSupport => {
                let b = self.dyad_target(a, m);
                for s in (0..self.players).filter(|&s| s != a && s != b) {
                    if y[self.arc(a, s)] {
                        f(self.arc(b, s), 1);
                        f(self.arc(s, b), 1);
                    }
                }
            }
            GameKind::DirectedNetworkReciprocity => {
                let b = self.dyad_target(a, m);
                f(self.arc(b, a), 1);
                for s in (0..self.players).filter(|&s| s != a && s != b) {
                    if y[self.arc(b, s)] {
                        f(self.arc(a, s), 2);
                    }
                    if y[self.arc(s, a)] {
                        f(self.arc(s, b), 2);
                    }
                }
            }
        }
    }

    pub fn strategic_statistic(&self, y: &ActionProfile, t: usize, m: usize) -> Result<Vec<f64>> {
        let c = self.check_indices(t, m)?;
        self.check_profile(y)?;
        let mut out = Vec::new();
        self.level_statistic(c, self.level_of(c, y.as_slice()), &mut out);
        Ok(out)
    }

    pub fn systematic_utility(&self, theta: &Theta, y: &ActionProfile, t: usize, m: usize) -> Result<f64> {
        let c = self.check_indices(t, m)?;
        self.check_profile(y)?;
        self.layout().check(theta)?;
        let base = self.base_utility(theta, c);
        Ok(base + self.level_dot(c, self.level_of(c, y.as_slice()), &theta.delta[self.action_type(c)]))
    }

    /// Sorted distinct bucket boundaries of coordinate `(t, m)` at `theta`.
    pub fn bucket_boundaries(&self, theta: &Theta, t: usize, m: usize) -> Result<Vec<f64>> {
        let c = self.check_indices(t, m)?;
        let payoffs = Payoffs::unchecked(self, theta)?;
        let size = self.level_count(c);
        if size > self.level_cap {
            return Err(Error::FeasibleSetTooLarge { t, m, size, cap: self.level_cap });
        }
        let mut values: Vec<f64> = (0..size as u32).map(|l| payoffs.utility_at_level(c, l)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(values)
    }

    pub fn check_supermodular(&self, theta: &Theta) -> Result<(), SupermodularityViolation> {
        for (block, delta) in theta.delta.iter().enumerate() {
            for (component, &value) in delta.iter().enumerate() {
                if !(value >= 0.0) {
                    return Err(SupermodularityViolation::NegativeDelta { block, component, value });
                }
            }
        }
        let n = self.coords();
        if n > BRUTE_FORCE_COORDS || self.layout().check(theta).is_err() {
            return Ok(());
        }
        let mut y = vec![false; n];
        for bits in 0u32..1 << n {
            for (i, v) in y.iter_mut().enumerate() {
                *v = bits >> i & 1 == 1;
            }
            for c in 0..n {
                let delta = &theta.delta[self.action_type(c)];
                let before = self.level_dot(c, self.level_of(c, &y), delta);
                for j in 0..n {
                    if j == c || y[j] {
                        continue;
                    }
                    y[j] = true;
                    let after = self.level_dot(c, self.level_of(c, &y), delta);
                    y[j] = false;
                    if after < before {
                        return Err(SupermodularityViolation::IncreasingDifferences {
                            affected: self.split(c),
                            raised: self.split(j),
                            profile: y.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn base_utility(&self, theta: &Theta, c: usize) -> f64 {
        let x = self.covariates(c);
        let beta = &theta.beta[self.action_type(c)];
        let mut v: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        if let (Some(sender), Some(receiver)) = (&theta.sender_effects, &theta.receiver_effects) {
            let (t, m) = self.split(c);
            v += sender[t] + receiver[self.dyad_target(t, m)];
        }
        v
    }
}

fn mean_level(count: u32, peers: usize) -> f64 {
    if peers == 0 {
        0.0
    } else {
        count as f64 / peers as f64
    }
}

fn flatten_rows(x: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    let k = x.first().map_or(0, Vec::len);
    if let Some(i) = x.iter().position(|row| row.len() != k) {
        return Err(Error::DimensionMismatch(format!("covariate row {i} has length {}, expected {k}", x[i].len())));
    }
    Ok((k, x.concat()))
}

/// A model bound to a parameter value, with the non-strategic part of
/// every coordinate's utility cached.
#[derive(Clone, Debug)]
pub struct Payoffs<'a> {
    model: &'a GameModel,
    theta: &'a Theta,
    base: Vec<f64>,
}

impl<'a> Payoffs<'a> {
    /// Binds `theta`, rejecting negative strategic parameters and oversized
    /// level sets.
    pub fn new(model: &'a GameModel, theta: &'a Theta) -> Result<Self> {
        if let Some((block, component, value)) = theta
            .delta
            .iter()
            .enumerate()
            .flat_map(|(b, d)| d.iter().enumerate().map(move |(k, &v)| (b, k, v)))
            .find(|&(_, _, v)| !(v >= 0.0))
        {
            return Err(Error::NotSupermodular(SupermodularityViolation::NegativeDelta { block, component, value }));
        }
        model.check_levels()?;
        Self::unchecked(model, theta)
    }

    /// Binds `theta` checking dimensions only; used where a negative
    /// strategic parameter is meaningful (bucket geometry, gradients).
    pub(crate) fn unchecked(model: &'a GameModel, theta: &'a Theta) -> Result<Self> {
        model.layout().check(theta)?;
        let base = (0..model.coords()).map(|c| model.base_utility(theta, c)).collect();
        Ok(Payoffs { model, theta, base })
    }

    pub fn model(&self) -> &'a GameModel {
        self.model
    }

    pub fn theta(&self) -> &'a Theta {
        self.theta
    }

    pub fn base(&self, c: usize) -> f64 {
        self.base[c]
    }

    #[inline]
    pub fn utility_at_level(&self, c: usize, level: u32) -> f64 {
        self.base[c] + self.model.level_dot(c, level, &self.theta.delta[self.model.action_type(c)])
    }

    pub fn utility(&self, c: usize, y: &[bool]) -> f64 {
        self.utility_at_level(c, self.model.level_of(c, y))
    }

    /// Utility at the all-ones profile (largest level for ordered games).
    pub fn max_utility(&self, c: usize) -> f64 {
        (0..self.model.level_count(c) as u32).map(|l| self.utility_at_level(c, l)).fold(f64::NEG_INFINITY, f64::max)
    }
}
