//! Error types shared across the library.

use thiserror::Error;

/// Errors produced by calibration, detection, assignment, and solver code.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A channel or energy argument fell outside the calibrated range.
    #[error("range error: {0}")]
    Range(String),

    /// Array dimensions are inconsistent or empty where data is required.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A configuration value violates its invariant.
    #[error("config error: {0}")]
    Config(String),

    /// The pulse dictionary could not be built.
    #[error("dictionary error: {0}")]
    Dictionary(String),

    /// A solver iterate became non-finite.
    #[error("solver diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    /// A statistic is undefined for the given input (e.g. correlation of a
    /// constant map).
    #[error("undefined statistic: {0}")]
    Undefined(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
