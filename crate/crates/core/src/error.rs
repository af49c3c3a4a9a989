use thiserror::Error;

/// Errors surfaced by the library.
///
/// Construction errors (`InvalidDimension`, `SyntaxError`, ...) indicate bad
/// inputs and are mapped to exit code 2 by the CLI; everything discovered
/// while solving maps to exit code 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: only n = 2 and n = 3 are supported")]
    InvalidDimension(usize),
    #[error("invalid resolution {0}: need even m >= 8")]
    InvalidResolution(usize),
    #[error("second difference direction must be a nonzero lattice vector")]
    ZeroDirection,

    #[error("syntax error at offset {offset}: {message}")]
    SyntaxError { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("function `{name}` expects {expected} argument(s), got {got}")]
    ArityError {
        name: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("sigma_k linearization is not elliptic: eigenvalues left the Gamma_k cone")]
    DegenerateLinearization,

    #[error("iterate left the Gamma_k cone and damping could not restore it")]
    ConeViolation,
    #[error("right side not admissible: {0}")]
    RightSideNotAdmissible(String),
    #[error("Newton continuation diverged: step fell below 2^-10 at t = {t}")]
    NewtonDivergence { t: f64 },
    #[error("bordered linear solve failed: residual {residual:.3e} exceeds {bound:.3e}")]
    LinearSolveFailure { residual: f64, bound: f64 },

    #[error("adjoint system is rank-deficient beyond the one-dimensional kernel")]
    SingularAdjoint,
    #[error("invariant measure not positive (min m = {min:.3e}); refine the grid")]
    NonPositiveMeasure { min: f64 },

    #[error("probe not applicable: {0}")]
    ProbeNotApplicable(String),

    #[error("radial mode requires rotationally invariant data: {0}")]
    NotRadial(String),
    #[error("outer truncation radius too small: need R >= 4 * rho_in")]
    TruncationTooSmall,
    #[error("no decay detected: {0}")]
    NoDecay(String),

    #[error("requested scale {requested} exceeds the sampling radius {max}")]
    OutOfRange { requested: f64, max: f64 },
    #[error(
        "lattice second differences vary across base points (spread {spread:.3e}); \
         input is not in the quadratic-plus-periodic class"
    )]
    InconsistentCurvature { spread: f64 },

    #[error("config error: {0}")]
    ConfigError(String),
}

/// Short machine-readable tag for CLI diagnostics, one per variant.
impl Error {
    pub fn tag(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "InvalidDimension",
            Error::InvalidResolution(_) => "InvalidResolution",
            Error::ZeroDirection => "ZeroDirection",
            Error::SyntaxError { .. } => "SyntaxError",
            Error::UnknownIdentifier { .. } => "UnknownIdentifier",
            Error::ArityError { .. } => "ArityError",
            Error::InvalidOperator(_) => "InvalidOperator",
            Error::DegenerateLinearization => "DegenerateLinearization",
            Error::ConeViolation => "ConeViolation",
            Error::RightSideNotAdmissible(_) => "RightSideNotAdmissible",
            Error::NewtonDivergence { .. } => "NewtonDivergence",
            Error::LinearSolveFailure { .. } => "LinearSolveFailure",
            Error::SingularAdjoint => "SingularAdjoint",
            Error::NonPositiveMeasure { .. } => "NonPositiveMeasure",
            Error::ProbeNotApplicable(_) => "ProbeNotApplicable",
            Error::NotRadial(_) => "NotRadial",
            Error::TruncationTooSmall => "TruncationTooSmall",
            Error::NoDecay(_) => "NoDecay",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::InconsistentCurvature { .. } => "InconsistentCurvature",
            Error::ConfigError(_) => "ConfigError",
        }
    }

    /// True for errors that indicate bad user input rather than a failed solve.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidDimension(_)
                | Error::InvalidResolution(_)
                | Error::SyntaxError { .. }
                | Error::UnknownIdentifier { .. }
                | Error::ArityError { .. }
                | Error::InvalidOperator(_)
                | Error::ConfigError(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
