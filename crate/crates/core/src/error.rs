use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("partition error: {0}")]
    Partition(String),
    #[error("offset {offset} out of range for block size {block_size}")]
    Offset { offset: usize, block_size: usize },
    #[error("attention mask must have at least one position")]
    EmptyMask,
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("grid index {0} out of range 0..81")]
    Grid(usize),
    #[error("loss error: {0}")]
    Loss(String),
    #[error("sequence length {len} exceeds model maximum {max}")]
    Length { len: usize, max: usize },
    #[error("paradigm error: {0}")]
    Paradigm(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("training diverged at step {step}: non-finite loss {loss}")]
    NonFinite { step: u64, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
