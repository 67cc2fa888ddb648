//! Error type shared by every module in the crate.

use thiserror::Error;

/// Minimum delivery rate treated as non-degenerate. Below this, the AoI
/// approximation would report astronomically large (meaningless) ages, so the
/// analysis raises [`Error::DegenerateRate`] instead.
pub const DEGENERATE_RATE_MIN: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is out of range (bad probability, H = 0, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A protocol spec violates its structural invariants.
    #[error("spec validation failed: {}", violations.join("; "))]
    Validation { violations: Vec<String> },

    /// A spec file could not be parsed (malformed JSON, dimension mismatch, ...).
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    /// An iterative solve ran out of iterations. `stage` names the failing
    /// solver; `history` carries the residual trajectory for diagnosis
    /// (empty for the inner stationary solve).
    #[error("{stage} did not converge after {iterations} iterations (last residual {residual:.3e}, threshold {threshold:.3e})")]
    NonConvergence {
        stage: &'static str,
        iterations: u64,
        residual: f64,
        threshold: f64,
        history: Vec<f64>,
    },

    /// The delivery rate is effectively zero, so expected AoI is unbounded.
    #[error("degenerate delivery rate m = {rate:.3e} (below {min:.0e}): expected AoI is unbounded", min = DEGENERATE_RATE_MIN)]
    DegenerateRate { rate: f64 },

    /// A statistical estimator was handed unusable input.
    #[error("estimator error: {0}")]
    Estimator(String),

    /// An operation that must yield at least one result yielded none
    /// (e.g. every grid point failed).
    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
