use thiserror::Error;

/// Failure modes of the adaptive integrator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("tolerance not met: {steps} steps exhausted at t = {t}")]
    ToleranceNotMet { t: f64, steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("invariant violated at t = {t}: {what}")]
    InvariantViolated { t: f64, what: String },
    #[error("tolerance {tol:e} outside the supported range [{min:e}, {max:e}]")]
    BadTolerance { tol: f64, min: f64, max: f64 },
}

/// Crate-wide error. Every variant names the operation that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: invalid input: {reason}")]
    InvalidInput { op: &'static str, reason: String },
    #[error("{op}: {source}")]
    Integration {
        op: &'static str,
        #[source]
        source: OdeError,
    },
    #[error("{op}: {reason}")]
    Degenerate { op: &'static str, reason: String },
    #[error("{op}: serialization failed: {reason}")]
    Format { op: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput { op, reason: reason.into() }
    }

    pub(crate) fn ode(op: &'static str) -> impl FnOnce(OdeError) -> Self {
        move |source| Error::Integration { op, source }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Integration { .. } | Error::Degenerate { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
