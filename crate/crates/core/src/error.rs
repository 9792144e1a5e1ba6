use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate trial: {0}")]
    DegenerateTrial(String),
    #[error("picard iteration stopped contracting after {iterations} iterations (increments {history:?})")]
    Diverged { iterations: usize, history: Vec<f64> },
    #[error("picard iteration did not converge within {iterations} iterations (increments {history:?})")]
    NotConverged { iterations: usize, history: Vec<f64> },
    #[error("time step {dt} violates the advective CFL limit; use dt <= {admissible}")]
    Cfl { dt: f64, admissible: f64 },
    #[error("data is not small enough: {0}")]
    NotSmall(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("inconsistent input: {0}")]
    Inconsistent(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
