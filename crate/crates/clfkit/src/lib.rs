//! Control-Lyapunov-function feedback synthesis and inverse-optimality diagnostics.
//!
//! Given an input-affine system `x' = f(x) + G(x) u` with `f(0) = 0`, a candidate
//! control Lyapunov function `V`, and constant positive-definite weights `Q`, `R`,
//! this crate synthesizes the weighted Sontag feedback
//!
//! ```text
//! u(x) = -lambda(x) R^-1 b(x),      b = G' dV/dx,   a = (dV/dx)' f,
//! lambda = (a + sqrt(a^2 + x'Qx * b'R^-1 b)) / (b'R^-1 b),
//! ```
//!
//! and provides the numerical machinery to check what that controller actually
//! minimizes: the quadratic running cost distorted by `1/lambda(x)`. When `V`
//! solves the Hamilton-Jacobi-Bellman equation of the undistorted problem,
//! `lambda` collapses to 1 and the feedback coincides with the classical
//! nonlinear-quadratic (for linear systems: LQR) optimum; the [`hjb`] and
//! [`care`] modules make that collapse testable.
//!
//! Module map:
//!
//! - [`expr`] — parsed scalar expressions over `x1..xn` with exact forward-mode
//!   derivatives (holds the concrete `f`, `G`, `V`).
//! - [`model`] — system/CLF/weight types, the `(a, b)` decomposition, and
//!   sampled CLF validation.
//! - [`sontag`] — the feedback law itself, robust around the `b(x) = 0` manifold.
//! - [`hjb`] — HJB residuals, the `lambda == 1` identity check, and the exact
//!   scalar (n = 1) solution.
//! - [`care`] — Newton-Kleinman Riccati solver producing the LQR baseline and
//!   the quadratic CLF `V = x'Px/2`.
//! - [`sim`] — closed-loop integration with both cost integrals carried as
//!   augmented states.
//! - [`catalog`] — built-in benchmark problems shared by tests and the CLI.

pub mod care;
pub mod catalog;
pub mod expr;
pub mod hjb;
pub mod model;
pub mod sim;
pub mod sontag;

pub use care::{solve_care, CareSolution, LinearSystem};
pub use expr::Expression;
pub use model::{check_clf, check_weights, eval_ab, ClfCandidate, SamplingConfig, SystemModel, Weights};
pub use sim::{simulate, SimConfig, Trajectory};
pub use sontag::SontagController;
