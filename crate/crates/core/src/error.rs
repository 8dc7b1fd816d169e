use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid network: {0}")]
    Validation(String),

    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedance { from: u32, to: u32 },

    #[error("unknown bus {0}")]
    UnknownBus(u32),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:e})")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("algebraic Jacobian is singular (index-1 condition violated) at {context}")]
    SingularAlgebraic { context: String },

    #[error("machine initialization failed at bus {bus}: {reason}")]
    Initialization { bus: u32, reason: &'static str },

    #[error("bus {bus} voltage collapsed to {v:e} pu")]
    VoltageCollapse { bus: u32, v: f64 },

    #[error("Newton corrector did not converge after {iterations} iterations (last step {last_step:e})")]
    NewtonDiverged { iterations: usize, last_step: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },

    #[error("non-finite value in step map {step}")]
    NonFinite { step: usize },

    #[error("state selector is empty")]
    EmptySelector,

    #[error("deformation tensor is degenerate (largest eigenvalue {0:e})")]
    DegenerateTensor(f64),

    #[error("tensor is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("requested {requested} nodes but only {available} are available")]
    TooManyNodes { requested: usize, available: usize },

    #[error("exhaustive search limited to {limit} candidates, got {got}")]
    SearchTooLarge { limit: usize, got: usize },
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: alloc::boxed::Box::new(self),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
