use std::path::PathBuf;

/// Errors produced anywhere in the navigation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rotation angle too close to pi for a unique logarithm")]
    AngleNearPi,
    #[error("matrix is not a valid group element: {0}")]
    NotInGroup(String),
    #[error("position norm {0:.1} m is below the Earth surface bound")]
    BelowEarthSurface(f64),
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("time step {0} s outside (0, 0.1]")]
    InvalidTimeStep(f64),
    #[error("covariance trace {0:e} exceeds blow-up threshold")]
    CovarianceBlowup(f64),
    #[error("innovation covariance is singular (condition number {0:e})")]
    SingularInnovationCov(f64),
    #[error("buffer holds {have} of {need} entries")]
    BufferNotFull { have: usize, need: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch of {0} samples is too small for batch normalisation")]
    DegenerateBatch(usize),
    #[error("backward pass requires a training-mode forward cache")]
    MissingCache,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unsupported weight file version: {0}")]
    Version(String),
    #[error("unknown trajectory family `{0}`")]
    UnknownFamily(String),
    #[error("segment {id} missing from {dir}")]
    MissingSegment { id: usize, dir: PathBuf },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("filter variant {0} requires network weights")]
    MissingWeights(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
