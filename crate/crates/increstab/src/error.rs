use std::path::PathBuf;

/// Errors shared by every module in the crate.
///
/// Contract violations (dimension mismatches, non-symmetric matrices, …) are
/// reported through dedicated variants so callers — in particular the CLI,
/// which maps them onto process exit codes — can tell configuration mistakes
/// apart from runtime failures such as a diverging integration.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric: |A - A^T| has a {0:.3e} entry (tolerance 1e-12)")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite: smallest eigenvalue {0:.6e}")]
    NotPositiveDefinite(f64),

    #[error("trajectory diverged at t = {time:.6}: |state| exceeded {limit:.1e}")]
    Divergence { time: f64, limit: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {path:?}; run `increstab {produce_with}` first")]
    MissingArtifact { path: PathBuf, produce_with: &'static str },

    #[error("corrupt artifact: {0}")]
    CorruptFile(String),

    #[error("replay failed at slot {slot}: {reason}")]
    ReplayFailed { slot: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
