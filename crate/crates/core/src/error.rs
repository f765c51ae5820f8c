//! Error type shared by all modules.

use thiserror::Error;

use crate::dynamics::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument values (non-positive mass, too few particles, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Tree-grammar syntax error, with a byte offset into the input.
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    /// Dimension or particle-count mismatch between arguments.
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    /// Operation undefined for the given state (e.g. angle rates at rho = 0).
    #[error("undefined state: {0}")]
    UndefinedState(String),

    /// An angle sits at a degenerate point (zero sub-norm) where the requested
    /// quantity is not defined.
    #[error("degenerate angle: {0}")]
    DegenerateAngle(String),

    /// A decomposition scale factor is singular while its paired angular
    /// momentum is not negligible.
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    /// Centrifugal barrier evaluated at rho = 0 with nonzero grand angular
    /// momentum.
    #[error("singular barrier: rho = 0 with lambda_sq > 0")]
    SingularBarrier,

    /// Scattering specification that cannot be integrated as stated.
    #[error("invalid scattering spec: {0}")]
    InvalidSpec(String),

    /// The integrator produced a non-finite state. The trajectory up to and
    /// including the last valid step is preserved.
    #[error("integration halted at step {step}: {message}")]
    IntegrationHalted {
        step: usize,
        message: String,
        partial: Box<Trajectory>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
