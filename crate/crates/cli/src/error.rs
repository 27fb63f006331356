use cantor_fourier::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("invalid config: {0}")]
    Config(String),

    /// Machine-readable violation list already written.
    #[error("validation failed: {}", .0.join("; "))]
    Violations(Vec<String>),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("output: {0}")]
    Output(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Output(_) => EXIT_USAGE,
            CliError::Config(_) | CliError::Violations(_) => EXIT_VALIDATION,
            CliError::Core(e) => match e {
                Error::Budget { .. } | Error::DepthCap { .. } => EXIT_BUDGET,
                Error::NonConvergence { .. }
                | Error::NoSignChange { .. }
                | Error::NonPositiveEigenfunction { .. }
                | Error::NonFinite(_)
                | Error::DegenerateFit(_) => EXIT_NUMERICAL,
                Error::Io(_) => EXIT_USAGE,
                _ => EXIT_VALIDATION,
            },
        }
    }
}
