use thiserror::Error;

/// Errors raised by the trust, ledger and learning primitives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("no observations for subject in this round")]
    NoObservations,
    #[error("energy capacity must be positive, got {0}")]
    InvalidCapacity(f64),
    #[error("{name} = {value} is outside [0, 1]")]
    Domain { name: &'static str, value: f64 },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("validator lottery has no candidates")]
    NoCandidates,
    #[error("refusing to append a block without transactions")]
    EmptyBlockRejected,
    #[error("ledger failed verification at height {0}")]
    CorruptLedger(u64),
    #[error("aggregation weights sum to zero")]
    DegenerateWeights,
    #[error("aggregation inputs have mismatched lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("federated round skipped: no eligible participants")]
    RoundSkipped,
    #[error("star topology hub {hub} is not a UAV id (n = {n})")]
    InvalidHub { hub: u32, n: usize },
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("ledger import failed at line {line}: {message}")]
    LedgerFormat { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::Domain { name, value })
    }
}
