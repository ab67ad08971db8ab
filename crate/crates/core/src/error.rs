use thiserror::Error;

/// Errors raised across the library.
///
/// Variants split into two families: malformed input (shapes, symmetry,
/// invalid states, bad parameters) and numerical failures raised while
/// iterating or reconstructing. [`Error::is_input_error`] tells them apart,
/// which the CLI maps onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("odd dimension {0}: a correlation matrix needs one (x, p) pair per mode")]
    OddDimension(usize),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("asymmetric matrix: residual {residual:e} exceeds tolerance {tol:e}")]
    Asymmetric { residual: f64, tol: f64 },

    #[error("matrix is not antisymmetric: residual {residual:e} exceeds tolerance {tol:e}")]
    NotAntisymmetric { residual: f64, tol: f64 },

    #[error("mode count must be at least 1")]
    ZeroModes,

    #[error("invalid tolerance {name} = {value:e}: must lie in (0, 1e-2)")]
    InvalidTolerance { name: &'static str, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("not a valid correlation matrix: lambda_min(gamma - iJ) = {margin:e}")]
    InvalidCm { margin: f64 },

    #[error("perturbation is not positive semidefinite: lambda_min = {lambda_min:e}")]
    NotPsd { lambda_min: f64 },

    #[error("non-finite iterate at step {step}")]
    NonFiniteIterate { step: usize },

    #[error("stopping tests are only defined for iterates with N >= 1")]
    StepZero,

    #[error("trace does not end in a separable verdict")]
    NotSeparable,

    #[error(
        "kernel inclusion violated at backward step {step}: residual {residual:e} exceeds {tol:e}"
    )]
    KernelCondition {
        step: usize,
        residual: f64,
        tol: f64,
    },

    #[error("backward step {step} produced a non-CM block: lambda_min = {margin:e}")]
    CertificateStep { step: usize, margin: f64 },

    #[error("no separable bracket found up to eps = {eps_max:e}")]
    BracketNotFound { eps_max: f64 },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for malformed or invalid input, false for numerical failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteIterate { .. }
                | Error::KernelCondition { .. }
                | Error::CertificateStep { .. }
                | Error::BracketNotFound { .. }
                | Error::StepZero
                | Error::NotSeparable
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
