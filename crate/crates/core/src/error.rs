use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game parameters: {0}")]
    InvalidParams(String),

    #[error("no threshold price in ({cost}, {reserve}); parameters are malformed")]
    NoThresholdRoot { cost: f64, reserve: f64 },

    #[error("price {price} outside [{lo}, {hi}]")]
    PriceOutOfRange { price: f64, lo: f64, hi: f64 },

    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("continuous expectation needs a positive demand half-width")]
    ZeroHalfWidth,

    #[error("demand support is empty")]
    EmptySupport,

    #[error("demand parameters must be integral for the discrete support (mean {mean}, half-width {half_width})")]
    NonIntegralDemand { mean: f64, half_width: f64 },

    #[error("opponent CDF is invalid: {0}")]
    InvalidCdf(String),

    #[error("unknown treatment label {0:?}")]
    UnknownTreatment(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("policy failure in round {round} for subject {subject}: {message}")]
    Policy {
        round: u32,
        subject: usize,
        message: String,
    },

    #[error("invalid session setup: {0}")]
    SessionSetup(String),

    #[error("session protocol violation: {0}")]
    Protocol(String),

    #[error("row {row}: {message}")]
    Ingest { row: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
