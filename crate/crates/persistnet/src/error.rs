use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the crate.
///
/// Numeric degeneracies (zero norms, constant sequences, collapsed
/// variances) get their own variants so callers can distinguish "the math
/// is undefined on this input" from plain bad arguments or I/O trouble.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector's norm fell below the zero-norm threshold where cosine
    /// geometry is undefined. Holds the offending index when the input was
    /// a collection.
    #[error("zero-norm vector{}: cosine distance is undefined", .index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    ZeroNormInput { index: Option<usize> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No object in the dataset has enough views to form a positive pair.
    #[error("insufficient views: {0}")]
    InsufficientViews(String),

    /// A category does not contain enough distinct objects.
    #[error("insufficient objects: {0}")]
    InsufficientObjects(String),

    /// Negative mining was handed an empty candidate pool.
    #[error("no valid negative candidates: {0}")]
    NoValidNegatives(String),

    /// The requested train/validation/test partition cannot be satisfied.
    #[error("split infeasible: {0}")]
    SplitInfeasible(String),

    /// A ranked list contains no relevant item, so average precision is
    /// undefined.
    #[error("no relevant items: {0}")]
    NoRelevant(String),

    /// Categorical retrieval needs at least two distinct categories.
    #[error("insufficient categories: found {0}, need at least 2")]
    InsufficientCategories(usize),

    /// A statistic is undefined on this input (e.g. rank correlation of a
    /// constant sequence).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Within-object scatter vanished everywhere, so the separation ratio
    /// is undefined.
    #[error("degenerate intra-object variance: {0}")]
    DegenerateIntra(String),

    /// The training objective left the finite range.
    #[error("training diverged: non-finite loss at iteration {iter}")]
    NonFiniteLoss { iter: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted artifact failed to parse; `line` is 1-based.
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
}
