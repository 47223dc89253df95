use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("slope fit needs at least 3 seed-mean points in the window, found {0}")]
    InsufficientPoints(usize),
    #[error("malformed results file: {0}")]
    Parse(String),
}

impl LabError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Validation(_) => 1,
            _ => 2,
        }
    }
}

impl From<saddle_core::Error> for LabError {
    fn from(e: saddle_core::Error) -> Self {
        LabError::Runtime(e.to_string())
    }
}
