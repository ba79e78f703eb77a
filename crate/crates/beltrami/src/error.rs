//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported sampling mode `{mode}` for manifold `{manifold}`")]
    UnsupportedMode { manifold: String, mode: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("degenerate stencil at point {base}: {reason}")]
    DegenerateStencil { base: usize, reason: String },

    #[error("rank-deficient local system at point {base} (K = {k}, cond ~ {cond:.3e})")]
    RankDeficient { base: usize, k: usize, cond: f64 },

    #[error("linear solver failed: {context} (best relative residual {residual:.3e})")]
    SolverFailure { context: String, residual: f64 },

    #[error("eigenvalue iteration did not converge: {context} (max Ritz residual {residual:.3e})")]
    EigenFailure { context: String, residual: f64 },

    #[error("oracle undefined at this point: {0}")]
    OracleUndefined(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
