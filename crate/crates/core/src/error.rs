//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced by grid construction, functional evaluation and the
/// nonlinear solvers.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Grid bounds are degenerate or cell counts are too small.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Exponent outside (1, 2) ∪ (2, ∞) where the caller required one.
    #[error("invalid exponent p = {p}: {reason}")]
    InvalidExponent { p: f64, reason: &'static str },

    /// A field was built on, or mixed with, the wrong grid.
    #[error("field/grid mismatch: {0}")]
    GridMismatch(String),

    /// An operation that needs a nonzero field received the zero field.
    #[error("zero field where a nonzero field is required")]
    ZeroField,

    /// Requested eigenpair count is zero or exceeds the interior dimension.
    #[error("invalid eigenpair count k = {k}: {reason}")]
    InvalidEigenCount { k: usize, reason: String },

    /// λ‖u‖₂² − ‖∇u‖₂² ≤ 0, so the Nehari projection scale does not exist.
    #[error("field outside the Nehari cone (lambda*l2 - h1 = {margin:.3e})")]
    NotInCone { margin: f64 },

    /// Picone evaluation needs strictly positive interior nodal values.
    #[error("picone comparison requires positive fields; node {node} has value {value:.3e}")]
    DomainError { node: usize, value: f64 },

    /// An iteration budget ran out before the tolerance was met.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },

    /// For p < 2 the inverse operator is only trusted on a ball around zero.
    #[error("iterate norm {norm:.3e} left the trust ball of radius {radius:.3e}")]
    TrustBallExceeded { norm: f64, radius: f64 },

    /// Branch continuation failed at some λ even after one step bisection.
    #[error("continuation stalled at lambda = {at_lambda} after {solved} points")]
    ContinuationStall { at_lambda: f64, solved: usize },

    /// A fit was requested on fewer points than the model needs.
    #[error("insufficient points for fit: got {got}, need {need}")]
    InsufficientPoints { got: usize, need: usize },

    /// Branch norms are not monotone, so the bifurcation side is undecided.
    #[error("ambiguous norm trend along branch: {0}")]
    AmbiguousTrend(String),

    /// No scale s with negative energy was found while seeding (p > 2).
    #[error("no negative-energy scale found above {smallest:.3e}")]
    NoNegativeScale { smallest: f64 },

    /// A solver or CLI configuration value is out of range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A linear system factorisation broke down (near-singular matrix).
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
}

impl Error {
    /// True for outcomes that mean "no solution there", as opposed to bad input.
    #[must_use]
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::MaxIterations { .. }
                | Error::TrustBallExceeded { .. }
                | Error::ContinuationStall { .. }
                | Error::LinearSolve(_)
                | Error::NoNegativeScale { .. }
        )
    }
}
