use credit_ensemble::Error;
use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, invalid parameters or unreadable input (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Input data the model cannot use (exit 3).
    #[error("{0}")]
    Data(String),
    /// A numerical scheme failed (exit 4).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Domain(_) | Error::InvalidParameter(_) | Error::Dimension(_) | Error::Parse(_) => {
                CliError::Usage(msg)
            }
            Error::Data(_) | Error::Matrix(_) => CliError::Data(msg),
            Error::Overflow(_)
            | Error::NoConvergence(_)
            | Error::Quadrature { .. }
            | Error::NoSignChange { .. }
            | Error::Consistency(_) => CliError::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(format!("I/O error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Usage(format!("CSV error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(format!("JSON error: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
