use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A building parameter set is internally inconsistent or out of range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A control rate outside `[-beta, alpha]` would leave the chain without a valid generator.
    #[error("control {u} outside Markov-rate interval [{lo}, {hi}]: the process fails to be a Markov chain")]
    ControlSaturation { u: f64, lo: f64, hi: f64 },

    /// Scenario or integration settings that cannot be run.
    #[error("configuration error: {0}")]
    Config(String),

    /// `x_N + x_2N` vanished, so the output no longer depends on the control.
    #[error("singular state: boundary mass x_N + x_2N = {0:e}")]
    SingularState(f64),

    #[error("observer gain selection failed: {0}")]
    GainSelection(String),

    #[error("dispatch solver failed: {0}")]
    Solver(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("simulation aborted at tick {tick} (building {building}): {source}")]
    Tick {
        tick: usize,
        building: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from user input (files, parameters) rather than a run-time failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_) | Error::Config(_) | Error::Parse { .. } | Error::Json(_) | Error::Io(_) | Error::Csv(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
