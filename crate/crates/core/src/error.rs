use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0}: expected 1, 2 or 3")]
    UnsupportedDimension(usize),
    #[error("grid needs at least 16 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid grid parameter: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("assignment is empty")]
    EmptyAssignment,
    #[error("assignment entries must be positive integers, found {0}")]
    InvalidEntry(i64),
    #[error("consecutive bumps {0} and {1} are assigned to the same component")]
    AdjacentRepeat(usize, usize),
    #[error("component {0} receives no bump")]
    NotSurjective(usize),
    #[error("component index {index} out of range 1..={k}")]
    IndexOutOfRange { index: usize, k: usize },

    #[error("shooting integrator failed: {0}")]
    StepFailure(String),
    #[error("amplitude window does not isolate {0} sign changes")]
    BracketingFailure(usize),
    #[error("Newton iteration diverged: {0}")]
    NewtonDivergence(String),
    #[error("cannot project the zero field")]
    ZeroField,
    #[error("annulus [{lo}, {hi}] holds fewer than 8 free nodes")]
    EmptyAnnulus { lo: f64, hi: f64 },
    #[error("bump count must be at least 1")]
    InvalidBumpCount,

    #[error("pulse {0} is degenerate (norm below 1e-10)")]
    DegeneratePulse(usize),
    #[error("pulse {0} takes negative values")]
    NegativePulse(usize),
    #[error("energy is unbounded above along some scaling direction")]
    UnboundedEnergy,
    #[error("maximizer search did not converge: {0}")]
    NonConvergence(String),
    #[error("components overlap; the annulus splitting needs disjoint components")]
    OverlappingComponents,
    #[error("no Miranda box found for q <= 20")]
    MirandaNotFound,

    #[error("maximizer failure: {0}")]
    MaximizerFailure(String),
    #[error("component {0} stays negative after damping")]
    NegativityPersistent(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Variant name, used as the `error` field of machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedDimension(_) => "UnsupportedDimension",
            Error::TooFewPoints(_) => "TooFewPoints",
            Error::InvalidGrid(_) => "InvalidGrid",
            Error::GridMismatch => "GridMismatch",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::EmptyAssignment => "EmptyAssignment",
            Error::InvalidEntry(_) => "InvalidEntry",
            Error::AdjacentRepeat(..) => "AdjacentRepeat",
            Error::NotSurjective(_) => "NotSurjective",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::StepFailure(_) => "StepFailure",
            Error::BracketingFailure(_) => "BracketingFailure",
            Error::NewtonDivergence(_) => "NewtonDivergence",
            Error::ZeroField => "ZeroField",
            Error::EmptyAnnulus { .. } => "EmptyAnnulus",
            Error::InvalidBumpCount => "InvalidBumpCount",
            Error::DegeneratePulse(_) => "DegeneratePulse",
            Error::NegativePulse(_) => "NegativePulse",
            Error::UnboundedEnergy => "UnboundedEnergy",
            Error::NonConvergence(_) => "NonConvergence",
            Error::OverlappingComponents => "OverlappingComponents",
            Error::MirandaNotFound => "MirandaNotFound",
            Error::MaximizerFailure(_) => "MaximizerFailure",
            Error::NegativityPersistent(_) => "NegativityPersistent",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
        }
    }

    /// Errors caused by the inputs rather than by a solver.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::UnsupportedDimension(_)
                | Error::TooFewPoints(_)
                | Error::InvalidGrid(_)
                | Error::EmptyAssignment
                | Error::InvalidEntry(_)
                | Error::AdjacentRepeat(..)
                | Error::NotSurjective(_)
                | Error::IndexOutOfRange { .. }
                | Error::InvalidBumpCount
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
