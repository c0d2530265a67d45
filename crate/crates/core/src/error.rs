use nalgebra::DVector;
use thiserror::Error;

use crate::problem::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite {what} at t = {t}")]
    Evaluation { t: f64, what: String },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: DVector<f64>,
    },

    #[error("singular Jacobian (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("Galerkin stage system is rank deficient")]
    RankDeficientStageSystem,

    #[error("Legendre transform is not invertible at t = {t}")]
    LegendreInversionFailure { t: f64 },

    #[error("trivialization is singular at q = {q:?}")]
    SingularTrivialization { q: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate regression: only {usable} usable error samples")]
    DegenerateRegression { usable: usize },

    #[error("blow-up at step {step} (magnitude {magnitude:e})")]
    BlowUp {
        step: usize,
        magnitude: f64,
        history: Box<Trajectory>,
    },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::StepFailed {
            step,
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through step wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::StepFailed { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of an iterative solver (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self.root(),
            Error::NoConvergence { .. }
                | Error::SingularJacobian { .. }
                | Error::RankDeficientStageSystem
                | Error::LegendreInversionFailure { .. }
                | Error::BlowUp { .. }
        )
    }
}

pub(crate) fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got,
            context,
        })
    }
}
