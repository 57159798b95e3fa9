use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid window [{start}, {end}]: start must precede end")]
    InvalidWindow { start: f64, end: f64 },

    #[error("time grid is not monotone at index {index} ({prev} -> {next})")]
    NonMonotoneGrid { index: usize, prev: f64, next: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("mark law rejected: {0}")]
    UnboundedMarkLaw(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state blew up at t = {time}: norm {norm:e} exceeds threshold {threshold:e}")]
    BlowUp { time: f64, norm: f64, threshold: f64 },

    #[error("noise bound violated at t = {time}: {what} norm {norm} > bound {bound}")]
    NoiseBoundViolated {
        time: f64,
        what: &'static str,
        norm: f64,
        bound: f64,
    },

    #[error("{what} did not converge: achieved residual {residual:e} (target {target:e})")]
    NonConvergence {
        what: &'static str,
        residual: f64,
        target: f64,
    },

    #[error("structural failure at t = {time}: {reason}")]
    Structural { time: f64, reason: String },

    #[error("state-transition envelope violated at (tau = {tau}, t = {t}): norm {norm} > {envelope}")]
    EnvelopeViolated {
        tau: f64,
        t: f64,
        norm: f64,
        envelope: f64,
    },

    #[error("noise dominates contraction: beta_w = {beta_w} <= 0 (2 alpha = {two_alpha}, noise penalty = {penalty})")]
    NoiseDominates {
        beta_w: f64,
        two_alpha: f64,
        penalty: f64,
    },

    #[error("insufficient stratum: no paths with k = {k} jumps")]
    InsufficientStratum { k: usize },

    #[error("bound kind `{bound}` does not match model kind `{model}`")]
    KindMismatch { bound: String, model: String },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
