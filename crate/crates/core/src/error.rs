use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("domain violation: {0}")]
    DomainViolation(String),

    /// The iterative solver hit its iteration cap. Carries the last iterate.
    #[error("solver did not converge after {iterations} iterations (frank-wolfe gap {gap:.3e})")]
    ConvergenceFailure {
        iterations: usize,
        gap: f64,
        last_iterate: Vec<f64>,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(invalid(format!("{name}[{i}] is not finite"))),
        None => Ok(()),
    }
}
