use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum CseError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: vertex index {index} out of range (mesh has {count} vertices)")]
    IndexOutOfRange {
        line: usize,
        index: i64,
        count: usize,
    },

    #[error("mesh has no vertices or no faces")]
    EmptyMesh,

    #[error("mesh is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("face {face} is degenerate")]
    DegenerateFace { face: usize },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("eigensolver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("loss became non-finite at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("malformed container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CseError>;
