//! Error type shared by every module of the crate.

/// Errors surfaced by matrix kernels, model constructors, solvers, and io.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: expected a square matrix, got {rows}x{cols}")]
    NotSquare {
        context: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{context}: dimension mismatch, {detail}")]
    DimensionMismatch {
        context: &'static str,
        detail: String,
    },

    #[error("{context}: non-finite entry at ({row},{col})")]
    NonFinite {
        context: &'static str,
        row: usize,
        col: usize,
    },

    #[error("{context}: eigendecomposition failed ({detail})")]
    EigFailure {
        context: &'static str,
        detail: String,
    },

    #[error("{context}: matrix is not positive definite (lambda_min = {lambda_min:.6e})")]
    NotPositiveDefinite {
        context: &'static str,
        lambda_min: f64,
    },

    #[error(
        "X does not certify bounded-realness: lambda_max of the LMI block is \
         {lambda_max:.6e}, above tolerance {tol:.6e}"
    )]
    NotBrCertificate { lambda_max: f64, tol: f64 },

    #[error("{context}: matrix is singular to working precision (rcond ~ {rcond:.3e})")]
    Singular { context: &'static str, rcond: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input file: {0}")]
    Format(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
