//! Error type shared by all core modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("truncation mismatch: {0}")]
    TruncationMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("spectrum is inadmissible: {0}")]
    Inadmissible(String),

    #[error("resonance at alpha={alpha:?}, component {j}")]
    Resonance { alpha: Vec<u16>, j: usize },

    #[error("series has a constant term where none is allowed")]
    ConstantTerm,

    #[error("order below 2: {0}")]
    OrderTooLow(String),

    #[error("singular constant term in matrix series")]
    SingularConstantTerm,

    #[error("support not contained in the requested slice: {0}")]
    NotInSlice(String),

    #[error("precondition not met: {0}")]
    Precondition(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
