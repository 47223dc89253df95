//! Error type shared by every module.

use alloc::string::String;

/// Failures reported by the library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("activation violates the classification hypothesis: {0}")]
    HypothesisViolation(String),
    #[error("activation `{0}` is not class D")]
    NotClassD(String),
    #[error("quadrature diverges for `{0}`: growth exceeds exp(g^2/4) on the node range")]
    QuadratureDivergence(String),
    #[error("adaptive quadrature stopped after {evaluations} evaluations with error {error:e}")]
    MaxSubdivisions { evaluations: usize, error: f64 },
    #[error("step size underflow at t = {t:e}")]
    StiffnessFailure { t: f64 },
    #[error("event not reached before t = {t_max:e}")]
    EventNotReached { t_max: f64 },
    #[error("drift below resolution ({0:e}); no exponent to fit")]
    DegenerateFit(f64),
    #[error("hierarchy ratio {ratio:.3} below floor {floor:.3}")]
    HierarchyTooWeak { ratio: f64, floor: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("width {n} not divisible by {k} blocks")]
    IndivisibleWidth { n: usize, k: usize },
    #[error("Gauss-Hermite estimator requires first-layer rows inside the teacher span")]
    EstimatorMismatch,
    #[error("non-finite gradient at step {0}")]
    NonFiniteGradient(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("Monte Carlo budget of {budget} samples cannot reach standard error {target:e}")]
    McBudgetExceeded { budget: usize, target: f64 },
    #[error("escape not reached within {steps} steps")]
    EscapeNotReached { steps: usize },
    #[error("cross-block moment is not positive: {0:e}")]
    NonpositiveMoment(f64),
    #[error("loop gain {0} <= 1: no positive real eigenvalue")]
    NoPositiveEigenvalue(f64),
    #[error("power iteration did not converge")]
    PowerIterationStall,
    #[error("truncation eigenvalues not strictly increasing at level {0}")]
    MonotonicityViolation(usize),
    #[error("escape is not transversal: grad h . f = {0:e}")]
    NonTransversalEscape(f64),
    #[error("finite-difference Jacobian inconsistent: relative gap {0:e}")]
    JacobianInconsistent(f64),
    #[error("need at least 3 points, got {0}")]
    InsufficientPoints(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = core::result::Result<T, Error>;
