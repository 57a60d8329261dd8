use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Lengths or shapes that disagree with each other.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension error: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    /// The binary mask has no foreground or no background, so the four-region
    /// decomposition is undefined. Callers skip the offending source image.
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),

    #[error("source exhausted for class {class}: needed {needed} usable images, found {found}")]
    SourceExhausted { class: u8, needed: usize, found: usize },

    #[error("regeneration error: {0}")]
    Regeneration(String),

    #[error("ingestion error for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("sample size error: {0}")]
    SampleSize(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dimension(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
