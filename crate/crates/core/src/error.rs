use thiserror::Error;

/// Errors raised by the numerical kernels and the scenario pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("system is not controllable (Kalman min singular value {min_sv:e}, max {max_sv:e})")]
    Uncontrollable { min_sv: f64, max_sv: f64 },

    #[error("controllability Gramian W(0,{t}) is singular")]
    SingularGramian { t: f64 },

    #[error("K_t inversion did not converge at t = {t} after {iterations} iterations (residual {residual:e})")]
    InversionFailed {
        t: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("target density vanishes at image point {point:?}")]
    VanishingDensity { point: Vec<f64> },

    #[error("flow program diverged at step {step} (|x| = {norm:e})")]
    FlowBlowUp { step: usize, norm: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
