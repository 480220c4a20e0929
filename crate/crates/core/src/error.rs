use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integration failed at t = {t}: step size {step} fell below {min_step} (error estimate {error_estimate})")]
    IntegrationFailure {
        t: f64,
        step: f64,
        min_step: f64,
        error_estimate: f64,
    },

    #[error("non-finite value at step {step}: {what}")]
    NumericFailure { step: usize, what: String },

    #[error("degenerate trajectory: state norm vanished at step {step}")]
    DegenerateTrajectory { step: usize },

    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),

    #[error("kernel is not positive semi-definite: eigenvalue {eigenvalue} below -{floor}")]
    NotPositiveSemidefinite { eigenvalue: f64, floor: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge: refinements {coarse} vs {fine} (relative difference {relative})")]
    QuadratureFailure { coarse: f64, fine: f64, relative: f64 },

    #[error("exponential fit failed (R² = {r_squared}); data: {data:?}")]
    FitFailure {
        r_squared: f64,
        data: Vec<(f64, f64)>,
    },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
