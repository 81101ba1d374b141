use std::process::ExitCode;

/// Failure classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, missing or malformed inputs.
    #[error("{0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// Results were written but the optimizer did not converge.
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    pub fn code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::NotConverged(_) => 4,
        })
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<surfglm::Error> for CliError {
    fn from(e: surfglm::Error) -> Self {
        use surfglm::Error as E;
        match e {
            E::NotPositiveDefinite { .. } | E::RankDeficient => CliError::Numeric(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
