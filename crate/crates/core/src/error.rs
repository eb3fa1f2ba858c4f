use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch in {op}: {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },

    #[error("unknown op kind `{0}`")]
    UnknownOp(String),

    #[error("no tape recorded for node {0}; it was produced in eval mode")]
    NoTape(usize),

    #[error("gradient seed has shape {seed:?}, root has shape {root:?}")]
    SeedShape { seed: Vec<usize>, root: Vec<usize> },

    #[error("function under test is not scalar-valued (shape {0:?})")]
    NonScalar(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("infeasible dataset: {0}")]
    Infeasible(String),

    #[error("configuration invalid:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("evaluation undefined: {0}")]
    Evaluation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
