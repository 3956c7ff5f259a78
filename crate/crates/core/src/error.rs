use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("NaN encountered in {0}")]
    NaN(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsupported by baseline: {0}")]
    UnsupportedByBaseline(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("shape mismatch at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
    #[error("state error: {0}")]
    State(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("ingestion error in {}: {msg}", path.display())]
    Ingestion { path: PathBuf, msg: String },
    #[error("oracle undefined: {0}")]
    OracleUndefined(String),
    #[error("training diverged (NaN loss) at epoch {epoch}, step {step}\n{snapshot}")]
    Diverged {
        epoch: usize,
        step: usize,
        snapshot: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
