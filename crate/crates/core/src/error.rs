use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("causality violation: reference {0:?} read before it was decoded")]
    Causality(crate::latent::Coord),
    #[error("coordinate {coord:?} is coded at step {actual}, not step {requested}")]
    StepMismatch {
        coord: crate::latent::Coord,
        requested: usize,
        actual: usize,
    },
    #[error("fusion undefined for additive mode")]
    AdditiveFusion,
    #[error("length mismatch: expected {expected}, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("symbol {value} outside table range and table has no escape bins")]
    SymbolRange { value: i64 },
    #[error("stream exhausted")]
    StreamExhausted,
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("config digest mismatch: stream {stream:08x}, decoder {decoder:08x}")]
    DigestMismatch { stream: u32, decoder: u32 },
    #[error("rate set is empty")]
    EmptyRateSet,
    #[error("rate {0} is not in the rate set")]
    RateNotInSet(usize),
    #[error("image format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
