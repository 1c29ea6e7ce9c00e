use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("word of length {length} exceeds the step {step} of the family")]
    UnsupportedDepth { length: usize, step: usize },

    #[error("point {point:?} lies outside the domain {domain}")]
    Domain { point: Vec<f64>, domain: String },

    #[error("trajectory left the outer domain at t = {exit_time} (point {point:?})")]
    DomainEscape { exit_time: f64, point: Vec<f64> },

    #[error("step-halving disagreement {disagreement:e} exceeds tolerance {tol:e} after refinement")]
    Stiffness { disagreement: f64, tol: f64 },

    #[error("flow duration {duration} exceeds the existence horizon t0 = {t0}")]
    HorizonExceeded { duration: f64, t0: f64 },

    #[error("Hormander condition fails at {point:?}: every commutator determinant vanishes")]
    HormanderViolation { point: Vec<f64> },

    #[error("degenerate commutator basis: |lambda_I| = {lambda:e} at {point:?}")]
    DegenerateBasis { lambda: f64, point: Vec<f64> },

    #[error("finite-difference step {step:e} too small for integration error {noise:e}")]
    IllConditionedJacobian { step: f64, noise: f64 },

    #[error("singular scaling-map differential at t = {t:?}")]
    SingularScaling { t: Vec<f64> },

    #[error("Newton iteration did not converge: residual {residual:e} at {last:?}")]
    NonConvergence { last: Vec<f64>, residual: f64 },

    #[error("no admissible path found within budget (best endpoint residual {residual:e})")]
    UnreachableWithinBudget { residual: f64 },

    #[error("unknown family '{name}'; available: {available}")]
    UnknownFamily { name: String, available: String },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("invalid family definition: {0}")]
    InvalidFamily(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
