use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid experiment: {0}")]
    InvalidExperiment(String),

    #[error("unknown simulator `{0}`")]
    UnknownSimulator(String),

    #[error("simulator `{got}` bound where `{expected}` is required")]
    SimulatorMismatch { expected: &'static str, got: String },

    #[error("input {name} = {value} outside [{low}, {high}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        low: f64,
        high: f64,
    },

    #[error("negative feature percentage: {name} = {value}")]
    NegativeFeature { name: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty dataset")]
    EmptyData,

    #[error("start box contains no points")]
    EmptyBox,

    #[error("degenerate box: zero width in dimension {0}")]
    DegenerateBox(usize),

    #[error("box restricts no dimensions; border is undefined")]
    UnrestrictedBox,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("step index {index} out of range for trajectory of {len} steps")]
    StepOutOfRange { index: usize, len: usize },

    #[error("matrix decomposition failed even at jitter {max_jitter}")]
    Decomposition { max_jitter: f64 },

    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("empty truth set")]
    EmptyTruth,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than a failure at
    /// run time. CLI maps these to exit code 1, the rest to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidExperiment(_)
                | Error::UnknownSimulator(_)
                | Error::InvalidConfig(_)
                | Error::OutOfRange { .. }
                | Error::NegativeFeature { .. }
                | Error::StepOutOfRange { .. }
        )
    }
}
