use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    #[error("cannot rescale the zero vector")]
    ZeroVector,

    #[error("quadrature did not converge in {op}: estimated error {error:e} exceeds tolerance {tolerance:e}")]
    Divergence {
        op: &'static str,
        error: f64,
        tolerance: f64,
    },

    #[error("{op} is not supported for density `{density}`: {reason}")]
    Unsupported {
        op: &'static str,
        density: String,
        reason: String,
    },

    #[error("{op} requires a finite moment of order {required}, but `{density}` only has moments of order < {available}")]
    MomentInsufficient {
        op: &'static str,
        density: String,
        required: f64,
        available: f64,
    },

    #[error("importance weights degenerate: effective sample size {ess:.1} < {minimum}")]
    Degenerate { ess: f64, minimum: f64 },

    #[error("dimension {n} exceeds the configured cap {cap} for {op}")]
    CapExceeded { op: &'static str, n: usize, cap: usize },

    #[error("radial integrand underflowed on {excluded} of {total} samples (limit {limit_fraction})")]
    Underflow {
        excluded: usize,
        total: usize,
        limit_fraction: f64,
    },

    #[error("gradient cross-check failed at sample {sample}: analytic {analytic:e} vs finite difference {finite_difference:e}")]
    GradientCheck {
        sample: usize,
        analytic: f64,
        finite_difference: f64,
    },

    #[error("insufficient data for {op}: {reason}")]
    Insufficient { op: &'static str, reason: String },

    #[error("unknown density `{0}`")]
    UnknownDensity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(op: &'static str, reason: impl Into<String>) -> Error {
    Error::Domain {
        op,
        reason: reason.into(),
    }
}
