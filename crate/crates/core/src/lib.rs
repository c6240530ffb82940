//! Numerical laboratory for the Dirichlet eigenvalue problem of the
//! (p,2)-Laplacian, −Δₚu − Δu = λu with u = 0 on the boundary, on intervals
//! and rectangles.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] builds uniform P1/Q1 meshes and assembles mass and stiffness
//!   operators over interior nodes;
//! * [`functionals`] evaluates the energy, its gradient, the Nehari
//!   constraint, a Picone-type comparison integral and the scalar vector
//!   inequalities behind the convergence estimates;
//! * [`solver`] computes linear eigenpairs and first nonlinear eigenpairs in
//!   both exponent regimes, plus the inverse operator and fixed-point map;
//! * [`bifurcation`] traces solution branches in λ and fits the amplitude
//!   scaling laws near the first linear eigenvalue;
//! * [`multiplicity`] runs symmetric multi-start searches for several
//!   solutions at one λ and counts nodal domains;
//! * [`verify`] bundles the invariant suite used by the `p2eig verify`
//!   command.

// Guards of the form `!(x > a)` are deliberate: unlike `x <= a` they also
// reject NaN, which must never pass validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Banded and stencil kernels index several arrays with offset arithmetic;
// explicit indices keep the triangular structure readable.
#![allow(clippy::needless_range_loop)]

pub mod bifurcation;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod linalg;
pub mod multiplicity;
pub mod solver;
pub mod verify;

pub use bifurcation::{
    BifurcationKind, BranchPoint, ProbeOutcome, ScalingFit, TracedBranch,
};
pub use error::Error;
pub use functionals::{EnergySetting, NehariReport};
pub use grid::{Field, Grid, GridSpec, Norms, SymmetricOperator};
pub use multiplicity::{CatalogEntry, PsReport, SolutionCatalog};
pub use solver::{EigenPair, SolveOutcome, SolverConfig, TrivialReport};
pub use verify::{CheckResult, VerifyReport};
