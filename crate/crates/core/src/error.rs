use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error(
        "resolvent iteration cap ({iterations}) exceeded for s = {s}, lambda = {lambda}; \
         last bracket [{lo}, {hi}]"
    )]
    ResolventDiverged {
        s: f64,
        lambda: f64,
        lo: f64,
        hi: f64,
        iterations: usize,
    },

    #[error("numerical conjugate requested at |s| = {0}, beyond the supported range 1e6")]
    ConjugateRange(f64),

    #[error("Newton iteration failed to converge; residual history {0:?}")]
    NewtonDiverged(Vec<f64>),

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("insufficient probes, missing: {0:?}")]
    MissingProbes(Vec<String>),

    #[error("empty sample set")]
    EmptySamples,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(x: f64, what: &'static str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
