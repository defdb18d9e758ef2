use thiserror::Error;

use crate::model::SupermodularityViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("interval lower bound {lower} exceeds upper bound {upper}")]
    IntervalOrder { lower: f64, upper: f64 },

    #[error("probability {0} outside the open unit interval")]
    InvalidProbability(f64),

    #[error("feasible statistic set for ({t}, {m}) has {size} levels, cap is {cap}")]
    FeasibleSetTooLarge { t: usize, m: usize, size: usize, cap: usize },

    #[error("supermodularity violated: {0}")]
    NotSupermodular(SupermodularityViolation),

    #[error("best-response iteration still changing after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("truncation mass for ({t}, {m}) vanishes at threshold {threshold}")]
    DegenerateTruncation { t: usize, m: usize, threshold: f64 },

    #[error("every importance summand underflowed at theta = {theta:?}")]
    AllMassUnderflow { theta: Vec<f64> },

    #[error("scenario recycling needs a single strategic parameter")]
    RecyclingUnavailable,

    #[error("scenario templates were built for a different configuration")]
    StaleTemplates,

    #[error("scenario enumeration would visit {count} scenarios (limit {limit})")]
    TooManyScenarios { count: f64, limit: usize },

    #[error("coordinate ({t}, {m}) is inactive even at the lower bracket")]
    NoActionRegion { t: usize, m: usize },

    #[error("Hessian is singular or indefinite (condition number {condition:e})")]
    SingularHessian { condition: f64 },

    #[error("probit data are perfectly separated")]
    Separation,

    #[error("optimizer stopped after {iterations} iterations without converging")]
    OptimizerNonConvergence { iterations: usize, theta: Vec<f64>, gradient_norm: f64 },

    #[error("game {game}: {source}")]
    InGame {
        game: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_game(self, game: usize) -> Self {
        match self {
            e @ Error::InGame { .. } => e,
            e => Error::InGame { game, source: Box::new(e) },
        }
    }
}
