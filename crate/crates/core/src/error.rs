use crate::vector::Space;

/// Errors produced anywhere in the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BloError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("space mismatch: {left:?} vs {right:?}")]
    SpaceMismatch { left: Space, right: Space },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("infeasible: dense Jacobian needs {entries} entries, limit is {limit}")]
    Infeasible { entries: usize, limit: usize },

    #[error("unknown {kind} '{name}'; valid names: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },
}

pub type Result<T> = std::result::Result<T, BloError>;
