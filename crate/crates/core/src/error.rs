use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid region `{region}`: {reason}")]
    InvalidRegion { region: String, reason: String },

    #[error("invalid polygon `{region}`: {reason}")]
    InvalidPolygon { region: String, reason: String },

    #[error("region `{0}` contains no grid point")]
    EmptyRegion(String),

    #[error("region `{0}` uses weighted-average aggregation but carries no cell weights")]
    MissingWeights(String),

    #[error("regions `{first}` and `{second}` overlap on cell {cell}")]
    OverlappingRegions {
        first: String,
        second: String,
        cell: usize,
    },

    #[error("cell {cell} of region `{region}` lies outside the {nx}x{ny} grid")]
    GridMismatch {
        region: String,
        cell: usize,
        nx: usize,
        ny: usize,
    },

    #[error("saved model grid {model} differs from the configured grid {config}")]
    ModelGridMismatch { model: String, config: String },

    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),

    #[error("covariance matrix is not positive definite (last jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("optimizer diverged: {0}")]
    OptimizerDiverged(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("truth value is exactly zero at index {0}")]
    ZeroTruthValue(usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("cross-validation failed: {0}")]
    CvFailed(String),

    #[error("grid with {0} points exceeds the exact-sampling bound")]
    GridTooLarge(usize),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 2 for input errors, 3 for numerical or optimizer
    /// failures, 4 for geometry mismatches.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::GridMismatch { .. } | Error::ModelGridMismatch { .. } => 4,
            Error::NotPositiveDefinite { .. }
            | Error::OptimizerDiverged(_)
            | Error::CvFailed(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
