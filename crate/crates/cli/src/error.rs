//! Command-line error type and the process exit codes it maps to.

use gridcast_core::CoreError;

/// Failure of a command, classified by exit code.
///
/// * `Usage` (exit 2): bad flags or a bad config file — the invocation
///   itself is wrong.
/// * `Data` (exit 3): an input file is missing, malformed, or does not
///   fit the requested operation.
/// * `Numeric` (exit 4): the computation produced a non-finite value.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }

    /// Classifies an engine error raised while reading or preparing
    /// inputs: everything, including a non-finite sample in a data file,
    /// is the data's fault.
    pub fn from_load(e: CoreError) -> Self {
        CliError::Data(e.to_string())
    }

    /// Classifies an engine error raised mid-computation: non-finite
    /// values get the dedicated numeric exit code, everything else is
    /// treated as data that does not fit the operation.
    pub fn from_compute(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }

    pub fn from_io(context: &str, e: std::io::Error) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
