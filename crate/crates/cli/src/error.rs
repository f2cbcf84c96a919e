use std::process::ExitCode;

/// A failed run, classified by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] kbal::Error),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError::Internal(msg.into())
    }

    /// Errors raised while writing outputs.
    pub fn output(e: kbal::Error) -> Self {
        CliError::Internal(e.to_string())
    }

    /// 2 for non-convergence, 3 for bad input, 1 otherwise.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Core(e) if e.is_non_convergence() => 2,
            CliError::Core(kbal::Error::Io(_)) | CliError::Internal(_) => 1,
            CliError::Core(_) | CliError::Input(_) => 3,
        })
    }

    pub fn status(&self) -> &'static str {
        match self {
            CliError::Core(e) if e.is_non_convergence() => "not_converged",
            CliError::Core(kbal::Error::Io(_)) | CliError::Internal(_) => "internal_error",
            CliError::Core(_) | CliError::Input(_) => "invalid_input",
        }
    }
}
