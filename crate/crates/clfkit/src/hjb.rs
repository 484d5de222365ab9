//! Hamilton-Jacobi-Bellman residuals and the `lambda == 1` collapse check.
//!
//! For the undistorted quadratic problem the HJB equation reads
//!
//! ```text
//! x'Qx/2 - (dJ/dx)' G R^-1 G' (dJ/dx) / 2 + (dJ/dx)' f = 0,
//! ```
//!
//! and its solution gradient defines the optimal feedback
//! `u = -R^-1 G' dJ/dx`. A candidate `V` solves it exactly when the
//! classical residual vanishes; in that case the Sontag distortion factor is
//! identically 1 and the Sontag feedback coincides with the optimum.
//! [`verify_lambda_identity`] measures both quantities over a seeded sample
//! so "how far from optimal" is a number, not a boolean.
//!
//! The distorted residual `x'Qx/2 - lambda^2 beta/2 + lambda a` is zero by
//! construction of `lambda`; evaluating it probes the root computation
//! itself, including the series branch.

use crate::expr::{EvalError, Expression};
use crate::model::{self, ClfCandidate, SamplingConfig, SystemModel, Weights};
use crate::sontag::{lambda_root, ControlError, SontagController, DEFAULT_BETA_TOL};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HjbError {
    #[error("g({x}) = 0 away from the origin: the scalar HJB has no pointwise solution there")]
    InputVanishes { x: f64 },
    #[error("{name} must be positive, got {value}")]
    NonPositiveWeight { name: &'static str, value: f64 },
    #[error("scalar value-function gradient is not finite at x = {x}")]
    NonFinite { x: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Left-hand side of the classical HJB with `dJ/dx` replaced by the
/// candidate's gradient; zero (to tolerance) iff the candidate solves the
/// equation at `x`.
pub fn hjb_residual_classical(
    system: &SystemModel,
    candidate: &ClfCandidate,
    weights: &Weights,
    x: &DVector<f64>,
) -> Result<f64, EvalError> {
    let ab = model::eval_ab(system, candidate, x)?;
    let beta = ab.b.dot(&weights.r_solve(&ab.b));
    Ok(0.5 * weights.state_cost(x) - 0.5 * beta + ab.a)
}

/// `x'Qx/2 - lambda^2 beta/2 + lambda a` with `lambda` from the controller;
/// a self-consistency probe of the root computation.
pub fn hjb_residual_distorted(
    ctrl: &SontagController,
    x: &DVector<f64>,
) -> Result<f64, ControlError> {
    let lambda = ctrl.lambda_value(x)?;
    let ab = model::eval_ab(ctrl.system(), ctrl.clf(), x)?;
    let beta = ab.b.dot(&ctrl.weights().r_solve(&ab.b));
    let q = ctrl.weights().state_cost(x);
    Ok(0.5 * q - 0.5 * lambda * lambda * beta + lambda * ab.a)
}

/// Pass thresholds for [`verify_lambda_identity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbTolerances {
    /// Bound on `max |classical residual|`.
    pub residual: f64,
    /// Bound on `max |lambda - 1|`.
    pub lambda_deviation: f64,
}

impl Default for HjbTolerances {
    fn default() -> Self {
        Self {
            residual: 1e-8,
            lambda_deviation: 1e-8,
        }
    }
}

/// Sampled magnitudes of the classical residual and the lambda deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbReport {
    pub samples: usize,
    pub max_abs_residual: f64,
    pub max_lambda_deviation: f64,
    /// States with `|b| <= b_epsilon`, excluded from the lambda statistic
    /// (the plus root divides by `b'R^-1 b`).
    pub skipped_small_b: usize,
    /// States where no positive root exists or evaluation failed.
    pub failures: usize,
    /// True iff both maxima are below their tolerances.
    pub passed: bool,
}

/// Sample the claim "if the classical residual vanishes everywhere, the
/// distortion factor is identically 1".
pub fn verify_lambda_identity(
    system: &SystemModel,
    clf: &ClfCandidate,
    weights: &Weights,
    sampling: &SamplingConfig,
    tolerances: &HjbTolerances,
) -> HjbReport {
    let mut max_abs_residual = 0.0f64;
    let mut max_lambda_deviation = 0.0f64;
    let mut skipped_small_b = 0;
    let mut failures = 0;

    for x in model::sample_states(system.state_dim(), sampling) {
        let ab = match model::eval_ab(system, clf, &x) {
            Ok(ab) => ab,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let beta = ab.b.dot(&weights.r_solve(&ab.b));
        let q = weights.state_cost(&x);
        max_abs_residual = max_abs_residual.max((0.5 * q - 0.5 * beta + ab.a).abs());

        if ab.b.norm() <= sampling.b_epsilon {
            skipped_small_b += 1;
            continue;
        }
        match lambda_root(ab.a, beta, q, DEFAULT_BETA_TOL) {
            Some((lambda, _)) if lambda.is_finite() => {
                max_lambda_deviation = max_lambda_deviation.max((lambda - 1.0).abs());
            }
            _ => failures += 1,
        }
    }

    let passed = max_abs_residual < tolerances.residual
        && max_lambda_deviation < tolerances.lambda_deviation;
    HjbReport {
        samples: sampling.samples,
        max_abs_residual,
        max_lambda_deviation,
        skipped_small_b,
        failures,
        passed,
    }
}

/// Pointwise solution `dJ/dx (x)` of the scalar (n = 1) HJB, selecting the
/// root with `dJ/dx * x > 0` so the value function is positive definite.
pub fn scalar_optimal_gradient(
    f: &Expression,
    g: &Expression,
    q: f64,
    r: f64,
    x: f64,
) -> Result<f64, HjbError> {
    if q <= 0.0 {
        return Err(HjbError::NonPositiveWeight {
            name: "q",
            value: q,
        });
    }
    if r <= 0.0 {
        return Err(HjbError::NonPositiveWeight {
            name: "r",
            value: r,
        });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let fx = f.evaluate(&[x])?;
    let gx = g.evaluate(&[x])?;
    if gx == 0.0 {
        return Err(HjbError::InputVanishes { x });
    }
    let g2_over_r = gx * gx / r;
    let root = (fx * fx + g2_over_r * q * x * x).sqrt();
    let grad = (fx + x.signum() * root) / g2_over_r;
    if !grad.is_finite() {
        return Err(HjbError::NonFinite { x });
    }
    Ok(grad)
}

/// Optimal feedback `u = -R^-1 G(x)' dJ/dx (x)` for a supplied
/// value-function gradient.
pub fn optimal_feedback<F>(
    system: &SystemModel,
    value_gradient: F,
    weights: &Weights,
    x: &DVector<f64>,
) -> Result<DVector<f64>, EvalError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, EvalError>,
{
    let grad = value_gradient(x)?;
    if grad.len() != system.state_dim() {
        return Err(EvalError::DimensionMismatch {
            expected: system.state_dim(),
            got: grad.len(),
        });
    }
    let g = system.input_at(x)?;
    Ok(-weights.r_solve(&(g.transpose() * grad)))
}
