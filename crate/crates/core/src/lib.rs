//! Scenario-sampling simulated maximum likelihood for binary-action
//! supermodular games.
//!
//! Shocks enter utility additively and an agent acts when systematic
//! utility reaches its shock; the observed profile is the minimal Nash
//! equilibrium. The likelihood of a profile is the shock mass of the
//! scenarios (products of per-coordinate buckets) whose minimal
//! equilibrium is that profile. [`sampler`] draws such scenarios directly,
//! [`lik`] turns them into an importance-sampled likelihood with an
//! analytic gradient, and [`fit`] maximizes it.

// `!(x >= 0.0)` guards reject NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dist;
pub mod equil;
pub mod error;
pub mod exper;
pub mod fit;
pub mod lik;
pub mod model;
pub mod oracle;
pub mod par;
pub mod sampler;
pub mod validate;

pub use dist::ShockFamily;
pub use equil::ShockMatrix;
pub use error::{Error, Result};
pub use lik::{CrnBlock, Dataset, Game};
pub use model::{ActionProfile, GameKind, GameModel, Network, Theta};
pub use sampler::{DrawOrder, ImportanceDraw, Scenario};
