// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the engine.

use thiserror::Error;

/// Errors raised by fitting, steering, persistence and evaluation.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum SakeError {
    #[error("empty sample set")]
    EmptySampleSet,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("matrix is singular within tolerance (smallest eigenvalue {min_eigenvalue:e}); raise the regularization")]
    SingularMatrix { min_eigenvalue: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("duplicate edit id `{0}`")]
    DuplicateEditId(String),

    #[error("unknown edit id `{0}`")]
    UnknownEditId(String),

    #[error("vocabulary of {vocab} labels does not fit in dimension {dim}")]
    VocabTooLarge { vocab: usize, dim: usize },

    #[error("unknown object label `{0}`")]
    UnknownObject(String),

    #[error("decodability check failed: {0}")]
    DecodabilityFailure(String),

    #[error("benchmark generation exhausted {attempts} attempts: {reason}")]
    GenerationRetryExhausted { attempts: usize, reason: String },

    #[error("schema violation{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    SchemaViolation { line: Option<usize>, message: String },

    #[error("unsupported document version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u64 },

    #[error("backend error: {0}")]
    Backend(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SakeError {
    pub(crate) fn schema(line: Option<usize>, message: impl Into<String>) -> Self {
        Self::SchemaViolation {
            line,
            message: message.into(),
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptySampleSet => "EmptySampleSet",
            Self::InsufficientSamples { .. } => "InsufficientSamples",
            Self::DimensionMismatch { .. } => "DimensionMismatch",
            Self::NotPositiveSemidefinite { .. } => "NotPositiveSemidefinite",
            Self::SingularMatrix { .. } => "SingularMatrix",
            Self::NonFinite(_) => "NonFinite",
            Self::InvalidArgument(_) => "InvalidArgument",
            Self::DuplicateEditId(_) => "DuplicateEditId",
            Self::UnknownEditId(_) => "UnknownEditId",
            Self::VocabTooLarge { .. } => "VocabTooLarge",
            Self::UnknownObject(_) => "UnknownObject",
            Self::DecodabilityFailure(_) => "DecodabilityFailure",
            Self::GenerationRetryExhausted { .. } => "GenerationRetryExhausted",
            Self::SchemaViolation { .. } => "SchemaViolation",
            Self::VersionMismatch { .. } => "VersionMismatch",
            Self::Backend(_) => "Backend",
            Self::Io(_) => "Io",
        }
    }

    /// Whether the error stems from numerical conditioning rather than bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::NotPositiveSemidefinite { .. } | Self::SingularMatrix { .. })
    }
}

pub type Result<T> = std::result::Result<T, SakeError>;
