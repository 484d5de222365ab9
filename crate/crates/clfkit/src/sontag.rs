//! The weighted Sontag feedback law and its distortion factor.
//!
//! For `b(x) != 0` the control is `u = -lambda(x) R^-1 b(x)` with
//!
//! ```text
//! lambda(x) = (a + sqrt(a^2 + x'Qx * b'R^-1 b)) / (b'R^-1 b),
//! ```
//!
//! the positive root of the quadratic
//! `x'Qx/2 - lambda^2 (b'R^-1 b)/2 + lambda a = 0`; for `b(x) = 0` the
//! control is zero. The law is continuous across the `b = 0` manifold, but
//! the raw root formula is not numerically usable there: for `a < 0` it
//! subtracts two nearly equal quantities. Two measures keep the evaluation
//! accurate:
//!
//! - for `a < 0` the root is computed in the conjugate form
//!   `lambda = q / (sqrt(a^2 + q beta) - a)`, which has no cancellation;
//! - once `beta / a^2` falls below [`SontagController::beta_tol`] (and the
//!   expansion parameter `q beta / a^2` is small enough for two terms to be
//!   accurate), the second-order series `q/(2|a|) - q^2 beta/(8|a|^3)` is
//!   reported as the [`Branch::Series`] value, matching the exact-law limit
//!   `b -> 0`.
//!
//! Where `b` vanishes while `a >= 0` off the origin the quadratic has no
//! positive root, the premise of the construction is void, and evaluation
//! fails hard with the offending state attached.

use crate::expr::EvalError;
use crate::model::{self, ClfCandidate, ClfReport, SamplingConfig, SystemModel, Weights};
use nalgebra::DVector;
use thiserror::Error;

/// Default switch threshold on the dimensionless ratio `beta / a^2`.
pub const DEFAULT_BETA_TOL: f64 = 1e-8;
/// Default state-norm threshold below which the feedback is exactly zero.
pub const DEFAULT_ORIGIN_TOL: f64 = 1e-12;
/// The two-term series is used only while `q beta / a^2` stays below this,
/// keeping its relative truncation error under ~1e-9.
const SERIES_EXPANSION_MAX: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(
        "CLF condition violated at x = {state:?}: b'R^-1 b = {beta:.3e} vanishes while a = {a:.3e} >= 0"
    )]
    ClfViolation { state: Vec<f64>, a: f64, beta: f64 },
    #[error("state norm {norm:.3e} is within origin_tol; the distortion factor is undefined at the equilibrium")]
    AtOrigin { norm: f64 },
    #[error("non-finite feedback at x = {state:?}")]
    NonFinite { state: Vec<f64> },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(
        "CLF check failed: {} positivity, {} condition violations, {} evaluation failures, radially unbounded: {}",
        .0.positivity_violations.len(),
        .0.condition_violations.len(),
        .0.eval_failures.len(),
        .0.radially_unbounded
    )]
    ClfCheckFailed(ClfReport),
}

/// Which formula produced a control evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Plus root of the distorted HJB quadratic.
    Regular,
    /// Second-order expansion of the plus root near `b = 0`.
    Series,
    /// Inside the origin ball: `u = 0`.
    Origin,
}

/// One feedback evaluation with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlEval {
    pub u: DVector<f64>,
    /// Distortion factor; positive whenever `branch != Origin`, reported as
    /// 1 at the origin (the cost integrand vanishes there anyway).
    pub lambda: f64,
    pub a: f64,
    pub b: DVector<f64>,
    pub branch: Branch,
}

/// Positive root of `q/2 - lambda^2 beta/2 + lambda a = 0`, or `None` when
/// no positive root exists (`b` vanished with `a >= 0`).
pub(crate) fn lambda_root(a: f64, beta: f64, q: f64, beta_tol: f64) -> Option<(f64, Branch)> {
    // beta = b'R^-1 b is nonnegative in exact arithmetic; clamp rounding
    let beta = beta.max(0.0);
    if a < 0.0 {
        let ratio = beta / (a * a);
        if ratio < beta_tol && q * ratio < SERIES_EXPANSION_MAX {
            let abs_a = -a;
            let lead = q / (2.0 * abs_a);
            return Some((lead - q * q * beta / (8.0 * abs_a.powi(3)), Branch::Series));
        }
        // conjugate form: sqrt(a^2 + q beta) - a adds two positive terms
        let s = (a * a + q * beta).sqrt();
        return Some((q / (s - a), Branch::Regular));
    }
    if beta <= 0.0 {
        return None;
    }
    let s = (a * a + q * beta).sqrt();
    Some(((a + s) / beta, Branch::Regular))
}

/// Scalar ingredients of the law at one state.
struct ScalarTerms {
    a: f64,
    beta: f64,
    q: f64,
    r_inv_b: DVector<f64>,
    b: DVector<f64>,
}

/// Bound tuple (system, CLF, weights, tolerances) evaluating the Sontag
/// feedback. Immutable after construction; evaluations are pure.
#[derive(Debug, Clone)]
pub struct SontagController {
    system: SystemModel,
    clf: ClfCandidate,
    weights: Weights,
    beta_tol: f64,
    origin_tol: f64,
}

impl SontagController {
    /// Build a controller, first validating the CLF by a sampled check; a
    /// failed check is a construction error carrying the report.
    pub fn new(
        system: SystemModel,
        clf: ClfCandidate,
        weights: Weights,
        sampling: &SamplingConfig,
    ) -> Result<Self, BuildError> {
        let report = model::check_clf(&system, &clf, sampling);
        if !report.passed {
            return Err(BuildError::ClfCheckFailed(report));
        }
        Self::new_unchecked(system, clf, weights)
    }

    /// Build without running the sampled CLF check (dimension checks still
    /// apply). Runtime evaluations will error on any visited state where the
    /// CLF condition fails.
    pub fn new_unchecked(
        system: SystemModel,
        clf: ClfCandidate,
        weights: Weights,
    ) -> Result<Self, BuildError> {
        if clf.dim() != system.state_dim() {
            return Err(BuildError::DimensionMismatch {
                what: "CLF",
                expected: system.state_dim(),
                got: clf.dim(),
            });
        }
        if weights.state_dim() != system.state_dim() {
            return Err(BuildError::DimensionMismatch {
                what: "Q",
                expected: system.state_dim(),
                got: weights.state_dim(),
            });
        }
        if weights.input_dim() != system.input_dim() {
            return Err(BuildError::DimensionMismatch {
                what: "R",
                expected: system.input_dim(),
                got: weights.input_dim(),
            });
        }
        Ok(Self {
            system,
            clf,
            weights,
            beta_tol: DEFAULT_BETA_TOL,
            origin_tol: DEFAULT_ORIGIN_TOL,
        })
    }

    pub fn with_beta_tol(mut self, beta_tol: f64) -> Self {
        assert!(beta_tol > 0.0);
        self.beta_tol = beta_tol;
        self
    }

    pub fn with_origin_tol(mut self, origin_tol: f64) -> Self {
        assert!(origin_tol >= 0.0);
        self.origin_tol = origin_tol;
        self
    }

    pub fn system(&self) -> &SystemModel {
        &self.system
    }

    pub fn clf(&self) -> &ClfCandidate {
        &self.clf
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn beta_tol(&self) -> f64 {
        self.beta_tol
    }

    pub fn origin_tol(&self) -> f64 {
        self.origin_tol
    }

    /// The scalar ingredients of the law at `x`; shared by every
    /// evaluation path.
    fn scalar_terms(&self, x: &DVector<f64>) -> Result<ScalarTerms, ControlError> {
        let ab = model::eval_ab(&self.system, &self.clf, x)?;
        let r_inv_b = self.weights.r_solve(&ab.b);
        let beta = ab.b.dot(&r_inv_b);
        let q = self.weights.state_cost(x);
        Ok(ScalarTerms {
            a: ab.a,
            beta,
            q,
            r_inv_b,
            b: ab.b,
        })
    }

    /// The distortion factor `lambda(x)` for `|x| > origin_tol`.
    pub fn lambda_value(&self, x: &DVector<f64>) -> Result<f64, ControlError> {
        let norm = x.norm();
        if norm <= self.origin_tol {
            return Err(ControlError::AtOrigin { norm });
        }
        let terms = self.scalar_terms(x)?;
        let (lambda, _) =
            lambda_root(terms.a, terms.beta, terms.q, self.beta_tol).ok_or_else(|| {
                ControlError::ClfViolation {
                    state: x.as_slice().to_vec(),
                    a: terms.a,
                    beta: terms.beta,
                }
            })?;
        if !lambda.is_finite() {
            return Err(ControlError::NonFinite {
                state: x.as_slice().to_vec(),
            });
        }
        Ok(lambda)
    }

    /// The feedback `u(x)` with its diagnostics. Inside the origin ball the
    /// control is exactly zero.
    pub fn feedback(&self, x: &DVector<f64>) -> Result<ControlEval, ControlError> {
        let m = self.system.input_dim();
        if x.norm() <= self.origin_tol {
            return Ok(ControlEval {
                u: DVector::zeros(m),
                lambda: 1.0,
                a: 0.0,
                b: DVector::zeros(m),
                branch: Branch::Origin,
            });
        }
        let terms = self.scalar_terms(x)?;
        let (lambda, branch) =
            lambda_root(terms.a, terms.beta, terms.q, self.beta_tol).ok_or_else(|| {
                ControlError::ClfViolation {
                    state: x.as_slice().to_vec(),
                    a: terms.a,
                    beta: terms.beta,
                }
            })?;
        let u = terms.r_inv_b * (-lambda);
        if !lambda.is_finite() || u.iter().any(|v| !v.is_finite()) {
            return Err(ControlError::NonFinite {
                state: x.as_slice().to_vec(),
            });
        }
        Ok(ControlEval {
            u,
            lambda,
            a: terms.a,
            b: terms.b,
            branch,
        })
    }

    /// `V' = a + b'u` along the closed loop; satisfies
    /// `V' = -(x'Qx + u'Ru) / (2 lambda)` because `lambda` solves the
    /// distorted HJB quadratic.
    pub fn vdot(&self, x: &DVector<f64>) -> Result<f64, ControlError> {
        let ev = self.feedback(x)?;
        Ok(ev.a + ev.b.dot(&ev.u))
    }
}
