//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by measure construction, solvers and certificate builders.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A measure or sampling scheme violates its structural invariants.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// An operation requiring at least one source received an empty measure.
    #[error("no sources")]
    NoSources,
    /// Derivative order outside `0..=3`.
    #[error("invalid derivative order {0}")]
    InvalidOrder(u8),
    /// Sample spacing would not fit inside the unit interval.
    #[error("sample spacing {0} is not below 1")]
    SpacingTooLarge(f64),
    /// Denominator minor vanished after equilibration.
    #[error("degenerate configuration")]
    DegenerateConfiguration,
    /// Not enough distinct samples to select two around every source.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    /// The active-set solver hit its iteration cap.
    #[error("nnls did not converge after {iterations} iterations (residual {residual})")]
    NotConverged {
        /// Iterations performed.
        iterations: usize,
        /// Residual of the best iterate.
        residual: f64,
        /// Best iterate on the grid.
        best: Vec<f64>,
    },
    /// The lambda equation has no sign change on the search bracket.
    #[error("no admissible λ₀")]
    NoAdmissibleLambda,
    /// Transport between measures of different mass.
    #[error("unequal masses {0} and {1}: use generalized_wasserstein")]
    UnequalMass(f64, f64),
    /// The residual heuristic cannot reach the requested separation.
    #[error("cannot build {0} atoms with separation {1} inside (0,1)")]
    InfeasibleProjection(usize, f64),
    /// A matrix argument is not positive where a positive determinant is required.
    #[error("determinant is not positive")]
    NonPositiveDeterminant,
    /// Reading or writing experiment artifacts failed.
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
