use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad column roles, unknown baseline level, malformed key-value config.
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values, non-binary outcomes, non-positive weights, schema mismatch.
    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("tuning failure: {0}")]
    Tuning(String),

    #[error("treatment not estimable: {0}")]
    NotEstimable(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("simulation failure: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_)
            | Error::Dimension { .. }
            | Error::NotEstimable(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 3,
            Error::DegenerateFit(_) | Error::Tuning(_) | Error::Calibration(_) | Error::Simulation(_) => 4,
        }
    }
}
