use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("label error: {0}")]
    Label(String),

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("invalid node profile: {0}")]
    Profile(String),

    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("degenerate partition: {0}")]
    PartitionDegenerate(String),

    #[error("undefined distribution: {0}")]
    UndefinedDistribution(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("ensemble error: {0}")]
    Ensemble(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("inversion error: {0}")]
    Inversion(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("cell (alpha={alpha}, rep={rep}) failed: {source}")]
    Cell {
        alpha: f64,
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
