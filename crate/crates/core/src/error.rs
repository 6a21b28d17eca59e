use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid goal: {0}")]
    InvalidGoal(String),
    #[error("grid size mismatch: state has {state}, goal has {goal}")]
    SizeMismatch { state: usize, goal: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid setting: {0}")]
    InvalidSetting(String),
    #[error("sampler exhausted {0} retries")]
    SamplerExhausted(usize),
    #[error("search bound exceeded: {needed} > {bound}")]
    BoundExceeded { needed: u128, bound: u128 },
    #[error("replay: {0}")]
    Replay(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {0}")]
    Config(String),
    #[error("stats: {0}")]
    Stats(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
