use std::fmt;

use loos_core::estimators::EstimateError;
use loos_core::experiments::ExperimentError;
use loos_core::gmrf::GmrfError;

/// Failure with its exit code: 2 usage or configuration, 3 numerical,
/// 4 input/output.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<GmrfError> for CliError {
    fn from(e: GmrfError) -> Self {
        match e {
            GmrfError::Linalg(_) => CliError::Numerical(e.to_string()),
            GmrfError::Io(_) | GmrfError::Json(_) | GmrfError::Csv(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Model(g) => g.into(),
            EstimateError::UnknownMethod(_) | EstimateError::InvalidInput(_) => CliError::Usage(e.to_string()),
            EstimateError::Io(_) | EstimateError::Csv(_) => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(m) => CliError::Usage(m),
            ExperimentError::Model(g) => g.into(),
            ExperimentError::Estimate(x) => x.into(),
            ExperimentError::Io(_) | ExperimentError::Csv(_) | ExperimentError::Json(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
