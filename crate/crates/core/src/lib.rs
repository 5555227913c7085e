//! Sparse functional concurrent log-contrast regression.
//!
//! A functional response `y_i(t)` is regressed on `q` time-varying
//! compositions (log-transformed) plus optional controls:
//!
//! ```text
//! y(t) = Z_c(t) β_c(t) + Z(t) β(t) + e(t),   L β(t) = 0 for all t
//! ```
//!
//! Coefficient curves live in a common B-spline basis, the zero-sum
//! constraint of each composition becomes `L̃ b = 0` on the stacked
//! coefficients, and a group-Lasso penalty selects whole curves. The
//! constrained problem is solved by an augmented Lagrangian method with an
//! ADMM inner solver.
//!
//! Module map:
//! - [`basis`]: clamped B-splines and their block-diagonal expansion.
//! - [`design`]: panels, zero replacement, closure, log design, constraints.
//! - [`quadrature`]: trapezoid Gram matrices and profiling of the controls.
//! - [`solver`]: augmented Lagrangian / ADMM, paths, baseline group Lasso.
//! - [`selection`]: cross-validation, one-SE rule, active sets, bootstrap.
//! - [`simulation`]: synthetic data and replicated studies.
//! - [`cli`]: dataset ingestion, exports and the command implementations.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod design;
pub mod error;
pub mod quadrature;
pub mod selection;
pub mod simulation;
pub mod solver;

pub use basis::BasisSpec;
pub use design::{ConstraintSet, FunctionalPanel, RegressionData};
pub use error::{Error, Result};
pub use quadrature::GramSystem;
pub use solver::{FitResult, SolverConfig};
