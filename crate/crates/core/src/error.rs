use std::fmt;

/// Everything that can go wrong in this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("argument outside the domain: {0}")]
    Domain(String),
    #[error("no convergence after {iterations} iterations ({context})")]
    NoConvergence { iterations: usize, context: String },
    #[error("log-magnitude {log_value:.3} exceeds the overflow cap {cap:.1}")]
    Overflow { log_value: f64, cap: f64 },
    #[error("finite-difference estimate at x = {x:e} is unreliable (order {order}, error estimate {estimate:e})")]
    Stencil { x: f64, order: usize, estimate: f64 },
    #[error("Riccati solution explodes at tau* = {tau_star}, before the requested horizon {horizon}")]
    Explosion { tau_star: f64, horizon: f64 },
    #[error("non-finite value in path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("not applicable: {0}")]
    NotApplicable(String),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl fmt::Display) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.to_string(),
        }
    }

    /// `true` for errors caused by bad input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::Domain(_) | Error::NotApplicable(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be finite, got {v}")))
    }
}

pub(crate) fn ensure_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive, got {v}")))
    }
}
