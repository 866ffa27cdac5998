use std::fmt;

use ctvio::estimator::EstimatorError;
use ctvio::io::IoError;
use ctvio::metrics::MetricsError;
use ctvio::simulator::SimError;
use ctvio::trajectory::TrajectoryError;

/// A failed run, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or inconsistent inputs.
    Config(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::NumericalFailure(_) => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Reads a config file as `key = value` pairs; parse errors are config errors.
pub fn load_config(path: &std::path::Path) -> CliResult<ctvio::io::KeyValues> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ctvio::io::parse_key_values(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn config_value<T>(r: Result<T, IoError>) -> CliResult<T> {
    r.map_err(|e| CliError::config(e.to_string()))
}
