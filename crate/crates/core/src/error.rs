use thiserror::Error;

/// Residuals carried by solver failures so callers can judge how close the
/// last iterate was.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterateResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{argument}`: expected {expected}, got {actual}")]
    Dimension {
        argument: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument `{argument}`: {reason}")]
    InvalidArgument {
        argument: &'static str,
        reason: String,
    },

    #[error("initial guess violates path constraints {rows:?} by more than {slack}")]
    InfeasibleStart { rows: Vec<usize>, slack: f64 },

    #[error("no convergence after {iterations} iterations (stationarity {:.3e}, feasibility {:.3e}, complementarity {:.3e})", residuals.stationarity, residuals.feasibility, residuals.complementarity)]
    NoConvergence {
        iterations: usize,
        residuals: IterateResiduals,
        /// Best iterate found, serialized as a `Solution` when available.
        best: Option<Box<crate::nlp::Solution>>,
    },

    #[error("problem is locally infeasible; violated constraints: {}", violated.join(", "))]
    Infeasible { violated: Vec<String> },

    #[error("quadratic subproblem failed: {0}")]
    Qp(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("{0}")]
    Analysis(String),

    #[error("exponential fit undetermined: {0}")]
    UndeterminedFit(String),

    #[error("leg {leg} of the horizon split failed: {source}")]
    SplitLeg {
        leg: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("receding-horizon step {step} failed: {source}")]
    MpcStep {
        step: usize,
        #[source]
        source: Box<Error>,
        partial: Box<crate::long_horizon::ClosedLoop>,
    },

    #[error("samples outside the constraint set: {indices:?}")]
    RejectedSamples { indices: Vec<usize> },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(argument: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            argument,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::InfeasibleStart { .. } => "infeasible_start",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Infeasible { .. } => "infeasible",
            Error::Qp(_) => "qp",
            Error::Numerical(_) => "numerical",
            Error::Analysis(_) => "analysis",
            Error::UndeterminedFit(_) => "undetermined_fit",
            Error::SplitLeg { .. } => "split_leg",
            Error::MpcStep { .. } => "mpc_step",
            Error::RejectedSamples { .. } => "rejected_samples",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(argument: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            argument,
            expected,
            actual,
        });
    }
    Ok(())
}
