use thiserror::Error;

use crate::expr::{EvalError, ParseError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("stencil at t = {t} with epsilon = {epsilon} leaves [{a}, {b}]")]
    OutOfDomain { t: f64, epsilon: f64, a: f64, b: f64 },
    #[error("{0} is not aligned with the sampling grid")]
    NotGridAligned(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("non-finite sample at t = {0}")]
    NonFinite(f64),
    #[error("evaluation window is empty")]
    EmptyWindow,
    #[error("no converged extraction on the probed grid ({excluded} points excluded)")]
    NoConvergedPoints { excluded: usize },
    #[error("field is not Hamiltonian (normalized hc1 = {hc1:e}, hc2 = {hc2:e})")]
    NotHamiltonian { hc1: f64, hc2: f64 },
    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("Legendre map is degenerate at the solution (smallest singular value {0:e})")]
    LegendreDegenerate(f64),
    #[error("field file line {line}: {message}")]
    FieldFile { line: usize, message: String },
    #[error("evaluation failed at {point}: {source}")]
    AtPoint { point: String, source: EvalError },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Eval(_)
                | Error::NonFinite(_)
                | Error::NoConvergedPoints { .. }
                | Error::NoConvergence { .. }
                | Error::LegendreDegenerate(_)
                | Error::AtPoint { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
