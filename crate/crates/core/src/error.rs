use thiserror::Error;

/// Errors shared across the library. Each variant maps to one failure class
/// named by the operation contracts (shape checks, degenerate inputs,
/// overflow, contamination, ...).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate vector: norm {norm:.3e} below floor {floor:.3e}")]
    DegenerateVector { norm: f64, floor: f64 },

    #[error("empty loss: no unmasked positions")]
    EmptyLoss,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradient for '{param}' at step {step}")]
    NonFiniteGradient { param: String, step: u64 },

    #[error("position overflow: sequence length {len} exceeds max positions {max}")]
    PositionOverflow { len: usize, max: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("scaffolding contamination: {0}")]
    Contamination(String),

    #[error("scaffolding detached: {0}")]
    Detached(String),

    #[error("visual target norm {0:.6} is not unit")]
    TargetNorm(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("teacher failure: {0}")]
    Teacher(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
