use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("weight file mismatch at layer `{layer}`: {msg}")]
    WeightMismatch { layer: String, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
