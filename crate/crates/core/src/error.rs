use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is unusable (zero bandwidth, zero threads, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data or a scenario violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A trace file could not be decoded.
    #[error("trace parse error at record {record} (byte offset {offset}): {reason}")]
    TraceParse {
        record: u64,
        offset: u64,
        reason: String,
    },

    /// The simulated guest did something the substrate cannot service,
    /// e.g. touching a page outside its mapping.
    #[error("simulation fault: {0}")]
    Fault(String),

    /// Internal bookkeeping broke. Aborts the run.
    #[error("invariant breach in {module} at t={time_ns}ns: {detail} (state digest {digest:016x})")]
    InvariantBreach {
        module: &'static str,
        time_ns: u64,
        detail: String,
        digest: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a simulator bug.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Validation(_) | Error::TraceParse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
