//! Equations of motion for point-mass systems under linear and nonlinear
//! kinematical constraints.
//!
//! The engine takes a configuration chart `q → X(q) ∈ ℝ^{3N}`, point masses,
//! explicit constraints `q̇_{m+ν} = α_ν(q, q̇_1..q̇_m)` and a force model, and
//! assembles the reduced acceleration system `M(q, u) ü = rhs(q, u)` along
//! several independent routes:
//!
//! * the reduced energy route ([`voronec`]), for linear and nonlinear
//!   constraint sets, including the linear β-form and the Čaplygin
//!   specialization;
//! * the projected Newton route ([`appell`]), contracting the mass metric and
//!   its curvature against the constraint partials, together with the
//!   acceleration-energy identity;
//! * a full-dimensional Lagrange-multiplier oracle ([`oracle`]) used as ground
//!   truth for both reduced routes.
//!
//! Every derivative flows through the forward-mode AD kernel in [`autodiff`];
//! a fixed-step RK4 integrator ([`integrator`]) and a set of analytically
//! auditable [`scenarios`] complete the toolbox. The [`verify`] module bundles
//! the cross-validation suites; [`testkit`] holds finite-difference oracles
//! and reference integrators for tests.

pub mod appell;
pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod integrator;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod scenarios;
pub mod testkit;
pub mod verify;
pub mod voronec;

pub use error::{Error, Result};
pub use model::{
    constraint_residual, full_velocity, generalized_forces, implicit_to_explicit, Chart,
    ConstraintMap, ConstraintSet, ForceModel, GeneralizedState, ImplicitLinearConstraints,
    LinearCoeffs, LinearPotential, Potential, SystemModel,
};
pub use voronec::{Formulation, ReducedSystem};
