use thiserror::Error;

use crate::integrators::ParticleState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown problem `{0}`")]
    NotFound(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A field was evaluated where it is not defined (e.g. on the axis of an
    /// inverse-radius potential).
    #[error("field evaluated outside its domain at {x:?}: {reason}")]
    Domain { x: [f64; 3], reason: &'static str },

    #[error("magnetic field vanishes at {0:?}")]
    DegenerateField([f64; 3]),

    /// The implicit position equation did not settle within the iteration
    /// budget. Carries the last iterate.
    #[error(
        "fixed-point iteration did not converge after {iterations} iterations \
         (last increment {increment:e})"
    )]
    Diverged {
        iterations: usize,
        increment: f64,
        last: Box<ParticleState>,
    },

    #[error("non-finite state after step {step} (t = {t})")]
    NumericalBlowup { step: usize, t: f64 },

    #[error("reference solver exceeded {0} steps")]
    MaxStepsExceeded(usize),

    #[error("reference solver step size underflow at t = {t} (h = {h:e})")]
    StiffnessSuspected { t: f64, h: f64 },

    #[error("problem config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Domain { .. }
                | Error::DegenerateField(_)
                | Error::Diverged { .. }
                | Error::NumericalBlowup { .. }
                | Error::MaxStepsExceeded(_)
                | Error::StiffnessSuspected { .. }
        )
    }
}
