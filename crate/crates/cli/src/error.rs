use thiserror::Error;

/// Failures that stop a run, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input; exit code 2.
    #[error("invalid input at `{field}`: {message}")]
    Input { field: String, message: String },
    /// Numerical or I/O failure inside a pipeline stage; exit code 3.
    #[error("{stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input { .. } => 2,
            CliError::Stage { .. } => 3,
        }
    }

    pub fn stage(stage: &'static str, e: impl std::fmt::Display) -> CliError {
        CliError::Stage {
            stage,
            message: e.to_string(),
        }
    }
}
