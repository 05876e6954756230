use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] turnpike_core::Error),
    #[error("no detectable lift: {points} usable points in the fit window, need at least 4")]
    NoLift { points: usize },
    #[error("missing or empty input {0}")]
    MissingInput(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type LabResult<T> = std::result::Result<T, LabError>;

impl LabError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Numerical(_) | LabError::NoLift { .. } => 3,
            LabError::MissingInput(_) | LabError::Io(_) | LabError::Json(_) => 1,
        }
    }
}
