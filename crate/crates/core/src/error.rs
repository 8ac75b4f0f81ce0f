use thiserror::Error;

/// Errors produced by the laboratory. Variants map one-to-one onto the
/// failure modes of the individual pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model at {pointer}: {reason}")]
    InvalidModel { pointer: String, reason: String },

    #[error("invalid configuration at {pointer}: {reason}")]
    InvalidConfig { pointer: String, reason: String },

    #[error("m(s) = 1 has no two real roots (discriminant {discriminant:.6e} <= 0)")]
    NoTwoRoots { discriminant: f64 },

    #[error("Mellin estimate diverged at s = {s}")]
    MellinDiverged { s: f64 },

    #[error("m(s) is infinite for every probed s in (0, {s_max}]")]
    NoFiniteWindow { s_max: f64 },

    #[error("tilted law is not normalized: |m(alpha) - 1| = {deviation:.3e}")]
    NotNormalized { deviation: f64 },

    #[error("{censored} of {total} first-passage paths still censored at the horizon cap")]
    CensoringExcess { censored: u64, total: u64 },

    #[error("enumeration needs {terms} terms, limit is {limit}")]
    ComplexityExceeded { terms: u128, limit: u128 },

    #[error("fixed-point iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("phi increased by {increase:.3e} at t = {t:.3e} in iteration {iteration}")]
    MonotonicityViolated { t: f64, increase: f64, iteration: usize },

    #[error("grid too narrow: |G| at the edges is {edge_ratio:.3e} of max |G|")]
    GridTooNarrow { edge_ratio: f64 },

    #[error("D(x) has no plateau over the last decade (relative spread {spread:.3e})")]
    NoPlateau { spread: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("tail window [{lo}, {hi}] is empty or too sparse: {reason}")]
    WindowEmpty { lo: f64, hi: f64, reason: String },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("model regime {regime} does not support this operation")]
    RegimeMismatch { regime: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(pointer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidModel {
            pointer: pointer.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
