use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("profile error: {0}")]
    Profile(String),
    #[error("validation error: {0}")]
    Invalid(String),
}

impl FeederError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FeederError::Invalid(msg.into())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("power flow did not converge in {iterations} iterations (last voltage change {last_change:.3e})")]
    NotConverged { iterations: usize, last_change: f64 },
    #[error("voltage collapse at bus '{bus}' (iteration {iteration})")]
    VoltageCollapse { bus: String, iteration: usize },
    #[error("invalid power-flow input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClosedFormError {
    #[error("DER at bus '{bus}': available power {p_avail} exceeds rating {rating}")]
    CapabilityEmpty { bus: String, p_avail: f64, rating: f64 },
    #[error("degenerate conic: line resistance is zero")]
    DegenerateConic,
    #[error("no real intersection for the unconstrained minimizer (discriminant {0:.3e})")]
    NegativeDiscriminant(f64),
    #[error("projection divides by a zero impedance component")]
    UnsupportedLine,
    #[error("invalid subproblem: {0}")]
    InvalidSubproblem(String),
    #[error("reduced problem has no feasible point")]
    Infeasible,
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error("power flow failed at step {step}: {source}")]
    PowerFlow {
        step: usize,
        #[source]
        source: PowerFlowError,
        /// Trace up to the last successful step.
        partial: Box<crate::agents::SimulationTrace>,
    },
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("every candidate dispatch violates the voltage limits")]
    Infeasible,
    #[error("grid search supports at most {max} DERs, feeder has {found}")]
    TooManyDers { max: usize, found: usize },
    #[error("feeder mixes control modes; the centralized baseline needs a single mode")]
    MixedModes,
    #[error(transparent)]
    ClosedForm(#[from] ClosedFormError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}
