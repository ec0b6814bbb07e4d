use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the model, its numerics, and the data layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar((usize, usize)),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("innovation variance {variance} is not positive at step {step}")]
    InnovationVariance { step: usize, variance: f64 },

    #[error("covariance factorization failed after jitter {jitter}")]
    Factorization { jitter: f64 },

    #[error("non-finite loss at epoch {epoch} for series `{series}`")]
    NonFinite { epoch: usize, series: String },

    #[error("unknown series id `{0}`")]
    UnknownSeries(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short stable category name, used for machine-readable diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } | Error::NotScalar(_) => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::InnovationVariance { .. } | Error::Factorization { .. } => "numerical",
            Error::NonFinite { .. } => "training",
            Error::UnknownSeries(_) => "unknown-series",
            Error::Csv(e) if e.is_io_error() => "io",
            Error::Data(_) | Error::Csv(_) => "data",
            Error::Checkpoint(_) | Error::Json(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

impl Error {
    /// An io error that names the file it concerns.
    pub fn io_at(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }
}

/// Open a CSV file for reading; failures name the path.
pub fn csv_reader(path: &std::path::Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io_at(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

/// Create a CSV file for writing; failures name the path.
pub fn csv_writer(path: &std::path::Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io_at(path, e))?;
    Ok(csv::Writer::from_writer(file))
}
