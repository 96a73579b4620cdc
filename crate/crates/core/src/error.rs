use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),

    #[error("diffusion step {step} outside 0..={max}")]
    StepOutOfRange { step: usize, max: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("item id {id} outside 0..={num_items}")]
    ItemOutOfRange { id: u32, num_items: usize },

    #[error("query embedding has zero norm; cosine ranking is undefined")]
    DegenerateEmbedding,

    #[error("cutoff K = {k} outside 1..={max}")]
    InvalidCutoff { k: usize, max: usize },

    #[error("attention has no unmasked key for {0}")]
    EmptyAttentionSupport(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
