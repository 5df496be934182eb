use serde_json::json;
use thiserror::Error;

/// Failure of a run, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Consistency(String),
    #[error("{0}")]
    NoConvergence(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::Consistency(_) => 2,
            CliError::NoConvergence(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
            CliError::Consistency(_) => "consistency",
            CliError::NoConvergence(_) => "no_convergence",
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() } })
            .to_string()
    }
}

impl From<padic_heat::Error> for CliError {
    fn from(e: padic_heat::Error) -> Self {
        use padic_heat::Error as E;
        match e {
            E::Consistency(_) => CliError::Consistency(e.to_string()),
            E::NoConvergence { .. } => CliError::NoConvergence(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
