//! Numerical solver for continuous-time mean-variance portfolio selection
//! with nonlinear wealth dynamics and a no-bankruptcy constraint.
//!
//! The pipeline: simulate a Brownian ensemble (`paths`), describe the
//! market through a wealth-equation driver (`drivers`), solve the wealth
//! BSDE backward by regression Monte Carlo (`bsde`), couple it with the
//! forward adjoint process (`fbsde`), and search the Lagrange multipliers
//! that pin the mean target and the budget (`dual`). The `oracle` module
//! carries the closed-form linear-model solution used for acceptance, and
//! `verify` bundles the cross-cutting property suites.
//!
//! All numeric code is generic over the scalar type; `f64` aliases are
//! exported for the common case.

pub mod bsde;
pub mod drivers;
pub mod dual;
pub mod error;
pub mod fbsde;
pub mod linalg;
pub mod oracle;
pub mod paths;
pub mod quadrature;
pub(crate) mod reduce;
pub mod scalar;
pub mod verify;

pub use error::{Result, SolverError};
pub use scalar::Scalar;

/// Double-precision time grid.
pub type TimeGrid64 = paths::TimeGrid<f64>;
/// Double-precision path ensemble.
pub type PathBundle64 = paths::PathBundle<f64>;
/// Double-precision backward solution.
pub type BsdeSolution64 = bsde::BsdeSolution<f64>;
/// Double-precision adjoint ensemble.
pub type AdjointPath64 = fbsde::AdjointPath<f64>;
/// Double-precision multiplier pair.
pub type Multipliers64 = dual::Multipliers<f64>;
/// Double-precision problem statement.
pub type ProblemSpec64 = dual::ProblemSpec<f64>;
/// Double-precision solve outcome.
pub type SolveReport64 = dual::SolveReport<f64>;
/// Double-precision optimality audit.
pub type KktSummary64 = dual::KktSummary<f64>;
/// Double-precision closed-form linear solution.
pub type OracleSolution64 = oracle::OracleSolution<f64>;
/// Double-precision coupling controls.
pub type PicardConfig64 = fbsde::PicardConfig<f64>;
