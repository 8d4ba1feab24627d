//! Library backing the `jorlin` binary, exposed so integration tests can
//! invoke commands in-process.

pub mod commands;
pub mod mapfile;
pub mod report;

use thiserror::Error;

/// Error carrying the process exit code contract:
/// 1 parse, 2 resonance, 3 inadmissible spectrum, 4 divergence,
/// 5 failed invariant.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("resonant spectrum: {0}")]
    Resonance(String),
    #[error("inadmissible spectrum: {0}")]
    Inadmissible(String),
    #[error("iteration diverged: {0}")]
    Divergence(String),
    #[error("invariant failed: {0}")]
    FailedInvariant(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 1,
            CliError::Resonance(_) => 2,
            CliError::Inadmissible(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::FailedInvariant(_) => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<jorlin_core::CoreError> for CliError {
    fn from(e: jorlin_core::CoreError) -> Self {
        use jorlin_core::CoreError as CE;
        match &e {
            CE::Resonance { .. } => CliError::Resonance(e.to_string()),
            CE::Inadmissible(_) => CliError::Inadmissible(e.to_string()),
            CE::Parse(_) => CliError::Parse(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
