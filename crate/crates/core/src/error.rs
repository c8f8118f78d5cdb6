//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-supplied configuration (bounds, counts, rates, windows).
    #[error("configuration error: {0}")]
    Config(String),

    /// Derivative order beyond what the stencil machinery supports.
    #[error("unsupported derivative order: {0}")]
    UnsupportedOrder(String),

    /// Non-finite values or other numeric breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Iterative solver ran out of its iteration budget.
    #[error("convergence error: {0}")]
    Convergence(String),

    /// Chromosome violates a structural precondition.
    #[error("structural error: {0}")]
    Structure(String),

    /// Candidate restriction left no admissible terms.
    #[error("no candidate terms: {0}")]
    NoCandidates(String),

    /// Built-in dataset generator failed (e.g. post-shock window requested).
    #[error("generation error: {0}")]
    Generation(String),

    /// CSV / metadata ingestion failure, with location where known.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Symbolic network training failed for every candidate.
    #[error("training error: {0}")]
    Training(String),

    /// Initial-guess generation failed for every (candidate, lambda) pair.
    #[error("guess generation error: {0}")]
    GuessGeneration(String),

    /// Limit-noise calibration could not bracket a zero-success magnitude.
    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
