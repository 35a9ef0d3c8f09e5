//! Process-level error classes; each maps to one documented exit code.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad config file, unknown names, invalid flag combinations. Exit 2.
    Config(String),
    /// A pipeline stage failed: IO, parse, backend, artifact errors. Exit 3.
    Pipeline(String),
    /// Inputs were readable but failed a contract check. Exit 4.
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Pipeline(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Pipeline(m) => write!(f, "pipeline error: {m}"),
            CliError::Validation(m) => write!(f, "validation failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(message: impl fmt::Display) -> CliError {
    CliError::Config(message.to_string())
}

pub fn pipeline_err(message: impl fmt::Display) -> CliError {
    CliError::Pipeline(message.to_string())
}

pub fn validation_err(message: impl fmt::Display) -> CliError {
    CliError::Validation(message.to_string())
}
