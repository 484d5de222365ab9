//! System, CLF, and weight types, plus the `(a, b)` decomposition of `V'`.
//!
//! Along a trajectory of `x' = f(x) + G(x) u` the derivative of a candidate
//! `V` splits into a drift part and an input-channel part,
//!
//! ```text
//! V' = (dV/dx)' f(x)  +  (dV/dx)' G(x) u  =  a(x) + b(x)' u .
//! ```
//!
//! `V` is a control Lyapunov function when it is positive definite, radially
//! unbounded, and `a(x) < 0` wherever `b(x) = 0` off the origin. Those
//! quantified properties cannot be proved by evaluation, so [`check_clf`]
//! reports "no violation found" over a seeded deterministic sample rather
//! than a proof.

use crate::expr::{EvalError, Expression};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Absolute tolerance for "vanishes at the origin" and symmetry checks.
pub const ORIGIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("drift component f{index} does not vanish at the origin: f{index}(0) = {value:.3e}")]
    DriftOriginNotEquilibrium { index: usize, value: f64 },
    #[error("CLF candidate does not vanish at the origin: V(0) = {value:.3e}")]
    ClfOriginNotZero { value: f64 },
    #[error("{what} is declared over {got} variables, system state dimension is {expected}")]
    ExpressionDimension {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("system needs at least one state and one input expression")]
    EmptySystem,
    #[error("input-matrix row {row} has {got} entries, expected {expected}")]
    RaggedInputMatrix {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{name} must be square, got {rows}x{cols}")]
    NotSquare {
        name: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{name} is not symmetric: max |M_ij - M_ji| = {max_asymmetry:.3e}")]
    NotSymmetric {
        name: &'static str,
        max_asymmetry: f64,
    },
    #[error("{name} is not positive definite (symmetric factorization has a non-positive pivot)")]
    NotPositiveDefinite { name: &'static str },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Input-affine system `x' = f(x) + G(x) u` with `f(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    drift: Vec<Expression>,
    input_matrix: Vec<Vec<Expression>>,
    n: usize,
    m: usize,
}

impl SystemModel {
    /// Build a system from its `n` drift expressions and `n x m` input-matrix
    /// expressions. Checks dimensions and that the origin is an equilibrium
    /// of the drift (`|f_i(0)| <= 1e-12`).
    pub fn new(
        drift: Vec<Expression>,
        input_matrix: Vec<Vec<Expression>>,
    ) -> Result<Self, ModelError> {
        let n = drift.len();
        if n == 0 || input_matrix.len() != n {
            return Err(ModelError::EmptySystem);
        }
        let m = input_matrix[0].len();
        if m == 0 {
            return Err(ModelError::EmptySystem);
        }
        for (row, entries) in input_matrix.iter().enumerate() {
            if entries.len() != m {
                return Err(ModelError::RaggedInputMatrix {
                    row: row + 1,
                    expected: m,
                    got: entries.len(),
                });
            }
        }
        for (i, e) in drift.iter().enumerate() {
            if e.dim() != n {
                return Err(ModelError::ExpressionDimension {
                    what: format!("f{}", i + 1),
                    expected: n,
                    got: e.dim(),
                });
            }
        }
        for (i, row) in input_matrix.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                if e.dim() != n {
                    return Err(ModelError::ExpressionDimension {
                        what: format!("G{}{}", i + 1, j + 1),
                        expected: n,
                        got: e.dim(),
                    });
                }
            }
        }
        let origin = vec![0.0; n];
        for (i, e) in drift.iter().enumerate() {
            let value = e.evaluate(&origin)?;
            if value.abs() > ORIGIN_TOLERANCE {
                return Err(ModelError::DriftOriginNotEquilibrium {
                    index: i + 1,
                    value,
                });
            }
        }
        Ok(Self {
            drift,
            input_matrix,
            n,
            m,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// `f(x)`.
    pub fn drift_at(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let point = x.as_slice();
        let mut out = DVector::zeros(self.n);
        for (i, e) in self.drift.iter().enumerate() {
            out[i] = e.evaluate(point)?;
        }
        Ok(out)
    }

    /// `G(x)` as an `n x m` matrix.
    pub fn input_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, EvalError> {
        let point = x.as_slice();
        let mut out = DMatrix::zeros(self.n, self.m);
        for (i, row) in self.input_matrix.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                out[(i, j)] = e.evaluate(point)?;
            }
        }
        Ok(out)
    }

    pub fn drift_expressions(&self) -> &[Expression] {
        &self.drift
    }

    pub fn input_expressions(&self) -> &[Vec<Expression>] {
        &self.input_matrix
    }
}

/// Candidate control Lyapunov function `V(x)` with gradient access.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfCandidate {
    v: Expression,
}

impl ClfCandidate {
    /// Wrap an expression as a CLF candidate; requires `|V(0)| <= 1e-12`.
    pub fn new(v: Expression) -> Result<Self, ModelError> {
        let value = v.evaluate(&vec![0.0; v.dim()])?;
        if value.abs() > ORIGIN_TOLERANCE {
            return Err(ModelError::ClfOriginNotZero { value });
        }
        Ok(Self { v })
    }

    pub fn dim(&self) -> usize {
        self.v.dim()
    }

    pub fn expression(&self) -> &Expression {
        &self.v
    }

    /// `V(x)`.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64, EvalError> {
        self.v.evaluate(x.as_slice())
    }

    /// `dV/dx (x)`, exact via dual-number passes.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        Ok(DVector::from_vec(self.v.gradient(x.as_slice())?))
    }
}

/// Constant symmetric positive-definite cost weights `(Q, R)`.
///
/// The factorization of `R` is computed once here and reused by every
/// controller evaluation.
#[derive(Debug, Clone)]
pub struct Weights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    r_chol: Cholesky<f64, Dyn>,
}

impl Weights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, ModelError> {
        check_weights(&q, &r)?;
        let r_chol = Cholesky::new(r.clone()).expect("validated positive definite");
        Ok(Self { q, r, r_chol })
    }

    /// Identity weights of the given state/input dimensions.
    pub fn identity(n: usize, m: usize) -> Self {
        Self::new(DMatrix::identity(n, n), DMatrix::identity(m, m))
            .expect("identity weights are positive definite")
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    /// `x' Q x`.
    pub fn state_cost(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[(0, 0)]
    }

    /// `u' R u`.
    pub fn input_cost(&self, u: &DVector<f64>) -> f64 {
        (u.transpose() * &self.r * u)[(0, 0)]
    }

    /// `R^-1 v` through the cached factorization.
    pub fn r_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.r_chol.solve(v)
    }

    /// `R^-1 M` through the cached factorization.
    pub fn r_solve_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.r_chol.solve(m)
    }
}

fn check_spd(name: &'static str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(ModelError::NotSquare {
            name,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let mut max_asymmetry = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            max_asymmetry = max_asymmetry.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asymmetry > ORIGIN_TOLERANCE {
        return Err(ModelError::NotSymmetric {
            name,
            max_asymmetry,
        });
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(ModelError::NotPositiveDefinite { name });
    }
    Ok(())
}

/// Accept `(Q, R)` iff both are symmetric (entrywise to 1e-12) and positive
/// definite, decided by the pivots of a symmetric factorization.
pub fn check_weights(q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<(), ModelError> {
    check_spd("Q", q)?;
    check_spd("R", r)
}

/// The scalar drift term and input-channel vector of `V'` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct AbPair {
    /// `a(x) = (dV/dx)' f(x)`.
    pub a: f64,
    /// `b(x) = G(x)' dV/dx`.
    pub b: DVector<f64>,
}

/// Evaluate the `(a, b)` decomposition at `x`.
pub fn eval_ab(
    system: &SystemModel,
    clf: &ClfCandidate,
    x: &DVector<f64>,
) -> Result<AbPair, EvalError> {
    if clf.dim() != system.state_dim() {
        return Err(EvalError::DimensionMismatch {
            expected: system.state_dim(),
            got: clf.dim(),
        });
    }
    let grad = clf.gradient(x)?;
    let f = system.drift_at(x)?;
    let g = system.input_at(x)?;
    Ok(AbPair {
        a: grad.dot(&f),
        b: g.transpose() * grad,
    })
}

/// Sample plan for the CLF checker and the HJB sampling diagnostics.
///
/// States are drawn as a uniformly random direction scaled by a radius
/// uniform in `[r_min, r_max]`; the draw is fully determined by `seed`.
/// `b_epsilon` is the norm threshold below which `b(x)` counts as vanished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    pub samples: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub b_epsilon: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            samples: 1000,
            r_min: 1e-2,
            r_max: 3.0,
            b_epsilon: 1e-9,
            seed: 42,
        }
    }
}

/// Deterministic sample of nonzero states per the config.
pub fn sample_states(n: usize, cfg: &SamplingConfig) -> Vec<DVector<f64>> {
    assert!(n >= 1);
    assert!(cfg.r_min > 0.0 && cfg.r_max >= cfg.r_min);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.samples);
    while out.len() < cfg.samples {
        let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm < 1e-12 {
            continue;
        }
        let radius = rng.random_range(cfg.r_min..=cfg.r_max);
        out.push(dir * (radius / norm));
    }
    out
}

/// One sampled state where positivity of `V` failed.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityViolation {
    pub state: Vec<f64>,
    pub v: f64,
}

/// One sampled state where `b` vanished but the drift did not decrease `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionViolation {
    pub state: Vec<f64>,
    pub a: f64,
    pub b_norm: f64,
}

/// One sampled state where evaluation itself failed (counted as a violation).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalFailure {
    pub state: Vec<f64>,
    pub error: String,
}

/// Outcome of the sampled CLF check.
///
/// A `passed` verdict means "no violation found over this sample", not a
/// proof; `radially_unbounded` is likewise only a heuristic (V must grow
/// along the `2n` axis rays out to `r_max`).
#[derive(Debug, Clone, PartialEq)]
pub struct ClfReport {
    pub samples: usize,
    pub positivity_violations: Vec<PositivityViolation>,
    pub condition_violations: Vec<ConditionViolation>,
    pub eval_failures: Vec<EvalFailure>,
    pub radially_unbounded: bool,
    pub passed: bool,
}

impl ClfReport {
    pub fn violation_count(&self) -> usize {
        self.positivity_violations.len() + self.condition_violations.len()
            + self.eval_failures.len()
    }
}

/// Check the CLF properties of `clf` against `system` over a seeded sample.
///
/// Per sampled `x != 0` this records a positivity violation when
/// `V(x) <= 0`, and a condition violation when `|b(x)| <= b_epsilon` while
/// `a(x) >= 0`. Evaluation failures are recorded, not thrown. The verdict
/// passes iff nothing was recorded and the radial heuristic holds.
pub fn check_clf(system: &SystemModel, clf: &ClfCandidate, cfg: &SamplingConfig) -> ClfReport {
    let n = system.state_dim();
    let mut positivity_violations = Vec::new();
    let mut condition_violations = Vec::new();
    let mut eval_failures = Vec::new();

    for x in sample_states(n, cfg) {
        match clf.value(&x) {
            Ok(v) => {
                if v <= 0.0 {
                    positivity_violations.push(PositivityViolation {
                        state: x.as_slice().to_vec(),
                        v,
                    });
                }
            }
            Err(e) => {
                eval_failures.push(EvalFailure {
                    state: x.as_slice().to_vec(),
                    error: e.to_string(),
                });
                continue;
            }
        }
        match eval_ab(system, clf, &x) {
            Ok(ab) => {
                if ab.b.norm() <= cfg.b_epsilon && ab.a >= 0.0 {
                    condition_violations.push(ConditionViolation {
                        state: x.as_slice().to_vec(),
                        a: ab.a,
                        b_norm: ab.b.norm(),
                    });
                }
            }
            Err(e) => eval_failures.push(EvalFailure {
                state: x.as_slice().to_vec(),
                error: e.to_string(),
            }),
        }
    }

    let radially_unbounded = radial_growth_heuristic(clf, n, cfg, &mut eval_failures);
    let passed = positivity_violations.is_empty()
        && condition_violations.is_empty()
        && eval_failures.is_empty()
        && radially_unbounded;
    ClfReport {
        samples: cfg.samples,
        positivity_violations,
        condition_violations,
        eval_failures,
        radially_unbounded,
        passed,
    }
}

/// V must increase along each of the `2n` axis rays out to `r_max`.
fn radial_growth_heuristic(
    clf: &ClfCandidate,
    n: usize,
    cfg: &SamplingConfig,
    eval_failures: &mut Vec<EvalFailure>,
) -> bool {
    const RAY_STEPS: usize = 16;
    let mut ok = true;
    for axis in 0..n {
        for sign in [1.0, -1.0] {
            let mut prev: Option<f64> = None;
            let mut first = f64::NAN;
            for k in 0..=RAY_STEPS {
                let radius =
                    cfg.r_min + (cfg.r_max - cfg.r_min) * (k as f64) / (RAY_STEPS as f64);
                let mut x = DVector::zeros(n);
                x[axis] = sign * radius;
                match clf.value(&x) {
                    Ok(v) => {
                        if k == 0 {
                            first = v;
                        }
                        if let Some(p) = prev {
                            if v < p - 1e-12 * p.abs().max(1.0) {
                                ok = false;
                            }
                        }
                        prev = Some(v);
                    }
                    Err(e) => {
                        eval_failures.push(EvalFailure {
                            state: x.as_slice().to_vec(),
                            error: e.to_string(),
                        });
                        ok = false;
                        break;
                    }
                }
            }
            if let Some(last) = prev {
                // NaN must count as failure, so compare for the good case
                let grew = last.partial_cmp(&first) == Some(std::cmp::Ordering::Greater);
                if !grew {
                    ok = false;
                }
            }
        }
    }
    ok
}
