use thiserror::Error;

/// Errors raised by the warpDLM library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("interval ({lower}, {upper}) has numerically zero mass under N({mean}, {sd}^2)")]
    ZeroMassInterval {
        lower: f64,
        upper: f64,
        mean: f64,
        sd: f64,
    },

    #[error("constraint region has numerically zero probability (log mass {log_mass:.3}): {context}")]
    ZeroMass { log_mass: f64, context: String },

    #[error("no feasible starting point for truncated sampling: {0}")]
    Infeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("observation {value} at time {t}, coordinate {coord} is outside the support: {reason}")]
    OutOfSupport {
        t: usize,
        coord: usize,
        value: u64,
        reason: String,
    },

    #[error("all particle weights underflowed at t={t}; increase the particle count or check the model")]
    WeightCollapse { t: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
