use thiserror::Error;

/// Errors raised while evaluating or validating a problem definition.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("problem must have at least one stage")]
    NoStages,
    #[error("stage {stage}: {item} has shape {actual:?}, expected {expected:?}")]
    Dimension {
        stage: usize,
        item: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("stage {stage}: {item} is not finite")]
    NonFinite { stage: usize, item: &'static str },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// Failures of the linear-algebra kernels and the structured step computation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("stage {stage}: dynamics Jacobian f_y is singular (rank {rank} of {dim})")]
    SingularDynamics {
        stage: usize,
        rank: usize,
        dim: usize,
    },
    #[error("stage {stage}: reduced Hessian not positive definite after jitter {jitter:e}")]
    Indefinite { stage: usize, jitter: f64 },
    #[error("stage {stage}: non-finite value in {what}")]
    NonFinite { stage: usize, what: &'static str },
    #[error("non-positive slack or multiplier at stage {stage}, row {row}")]
    NonPositive { stage: usize, row: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Errors from the dense reference solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("instance too large for the dense oracle: {0} unknowns (limit {1})")]
    TooLarge(usize, usize),
    #[error("dense system contains non-finite entries")]
    NonFinite,
    #[error(
        "barrier method did not converge: KKT residual {residual:e} after {iterations} iterations"
    )]
    NotConverged { residual: f64, iterations: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl StepError {
    /// Attaches the stage index to errors raised by stage-local kernels.
    pub fn at_stage(self, k: usize) -> Self {
        match self {
            Self::SingularDynamics { rank, dim, .. } => Self::SingularDynamics {
                stage: k,
                rank,
                dim,
            },
            Self::Indefinite { jitter, .. } => Self::Indefinite { stage: k, jitter },
            Self::NonFinite { what, .. } => Self::NonFinite { stage: k, what },
            Self::NonPositive { row, .. } => Self::NonPositive { stage: k, row },
            other => other,
        }
    }
}
