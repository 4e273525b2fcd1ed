use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("measures live on different grids ({left} vs {right})")]
    GridMismatch { left: String, right: String },

    #[error("site index {index} out of range for {sites} sites")]
    SiteOutOfRange { index: usize, sites: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shift {shift} is not a multiple of the grid spacing 1/{n}")]
    NotGridAligned { shift: f64, n: usize },

    #[error("singular time: t = {t} must be < T = {horizon}")]
    SingularTime { t: f64, horizon: f64 },

    #[error("exact solver did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("sinkhorn stopped after {iterations} iterations with marginal violation {violation:e}")]
    SinkhornNotConverged { iterations: usize, violation: f64 },

    #[error("intensity {value} exceeds lambda_max {lambda_max} at t = {t}")]
    IntensityBound { t: f64, value: f64, lambda_max: f64 },

    #[error("policy `{policy}` cannot be played against target `{target}`")]
    IncompatiblePolicy { policy: &'static str, target: &'static str },

    #[error("blow-up hypothesis violated: the jump operator fixes the target")]
    BlowupHypothesis,

    #[error("identity is +inf = +inf: {0}")]
    DivergentIdentity(String),

    #[error("rollout failed on path {path} (seed {seed}): {source}")]
    Rollout {
        path: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad inputs rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::NonConvergence { .. }
            | Error::SinkhornNotConverged { .. }
            | Error::IntensityBound { .. } => false,
            Error::Rollout { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
