use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid network model: {0}")]
    InvalidModel(String),
    #[error("singular network: admittance condition estimate {condition:.3e} exceeds {limit:.0e}")]
    SingularNetwork { condition: f64, limit: f64 },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("distance matrix is not symmetric with zero diagonal: {0}")]
    NonSymmetric(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("operation requires a {expected} embedding")]
    MethodMismatch { expected: &'static str },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("raster grids differ in resolution or bounding box")]
    GridMismatch,
    #[error("column `{0}` is constant")]
    ConstantColumn(String),
    #[error("centered kernel matrix is numerically zero for `{0}`")]
    DegenerateKernel(String),
    #[error("covariance block is rank deficient after regularization")]
    RankDeficient,
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("covariance is not symmetric positive definite: {0}")]
    NonSpd(String),
    #[error("mixture collapsed to zero components")]
    CollapsedComponent,
    #[error("no orthogonal design for {levels} levels and {factors} factors")]
    UnsupportedDesign { levels: usize, factors: usize },
    #[error("invalid uncertainty spec: {0}")]
    InvalidSpec(String),
    #[error("too few scenarios: need at least {needed}, got {got}")]
    TooFewScenarios { needed: usize, got: usize },
    #[error("typical scenario set has no fitted clusters")]
    UnfittedSet,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid fault: {0}")]
    InvalidFault(String),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } => ErrorKind::Usage,
            Error::SingularNetwork { .. }
            | Error::RankDeficient
            | Error::NonSpd(_)
            | Error::CollapsedComponent
            | Error::DegenerateKernel(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
