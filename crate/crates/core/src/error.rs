use thiserror::Error;

/// Every failure mode surfaced by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FbError {
    #[error("{quantity} = {value} outside admissible range ({lo}, {hi})")]
    AdmissibilityViolation { quantity: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("sound speed {cs} not below light speed {c}")]
    SubluminalViolation { cs: f64, c: f64 },
    #[error("superluminal input: eps_c*|v| = {0}")]
    SuperluminalInput(f64),
    #[error("four-velocity normalization off by {0}")]
    NormalizationViolation(f64),
    #[error("degenerate lifting: d1_Phi = {0} < 1/2")]
    DegenerateLifting(f64),
    #[error("cutoff profile infeasible: max|chi'| = {0} >= 1")]
    ProfileInfeasible(f64),
    #[error("derivative order {order} exceeds grid resolution ({detail})")]
    OrderExceedsResolution { order: usize, detail: String },
    #[error("CFL violation: dt = {dt} exceeds stable step {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("basic state violation: {0}")]
    BasicStateViolation(String),
    #[error("sign condition lost: d1 q = {value} < {threshold} at t = {t}")]
    SignConditionLost { value: f64, threshold: f64, t: f64 },
    #[error("margin lost: {0}")]
    MarginLost(String),
    #[error("divergence detected at step {step}")]
    DivergenceDetected { step: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type FbResult<T> = Result<T, FbError>;
