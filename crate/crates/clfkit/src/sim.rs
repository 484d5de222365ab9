//! Closed-loop integration with both cost functionals carried as state.
//!
//! The loop `x' = f(x) + G(x) u(x)` is augmented with two running
//! integrals,
//!
//! ```text
//! J4' = (x'Qx + u'Ru) / (2 lambda(x)),      J5' = (x'Qx + u'Ru) / 2,
//! ```
//!
//! so quadrature error tracks the integrator tolerance instead of a
//! post-hoc rule over saved samples. `J4` is the cost the Sontag feedback
//! actually minimizes (its converged value equals `V(x0)`), `J5` the
//! classical quadratic cost; the two coincide whenever the controller
//! reports `lambda == 1`.
//!
//! The infinite-horizon integrals are truncated at `stop_norm`; the
//! remaining tail is reported: exactly `V(x(T))` for `J4` (the conservation
//! identity), and the crude bound `lambda_max * V(x(T))` for `J5`.

use crate::expr::EvalError;
use crate::model::{ClfCandidate, SystemModel, Weights};
use crate::sontag::{ControlError, SontagController};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("adaptive step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },
    #[error("trajectory did not converge ({termination})")]
    NotConverged { termination: String },
    #[error("initial state has {got} components, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// State-to-input map with its cost-distortion factor. Plain feedbacks
/// (LQR and friends) report `lambda = 1`.
pub trait StateFeedback {
    fn control(&self, x: &DVector<f64>) -> Result<FeedbackSignal, ControlError>;
    fn input_dim(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackSignal {
    pub u: DVector<f64>,
    pub lambda: f64,
}

impl StateFeedback for SontagController {
    fn control(&self, x: &DVector<f64>) -> Result<FeedbackSignal, ControlError> {
        let ev = self.feedback(x)?;
        Ok(FeedbackSignal {
            u: ev.u,
            lambda: ev.lambda,
        })
    }

    fn input_dim(&self) -> usize {
        self.system().input_dim()
    }
}

/// `u = -Kx` with `lambda == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeedback {
    gain: DMatrix<f64>,
}

impl LinearFeedback {
    pub fn new(gain: DMatrix<f64>) -> Self {
        Self { gain }
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }
}

impl StateFeedback for LinearFeedback {
    fn control(&self, x: &DVector<f64>) -> Result<FeedbackSignal, ControlError> {
        Ok(FeedbackSignal {
            u: -(&self.gain * x),
            lambda: 1.0,
        })
    }

    fn input_dim(&self) -> usize {
        self.gain.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepMethod {
    Rk4Fixed { step: f64 },
    Rk45Adaptive { rtol: f64, atol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub method: StepMethod,
    /// Horizon in seconds.
    pub t_max: f64,
    /// Terminate once `|x| <= stop_norm`.
    pub stop_norm: f64,
    pub max_steps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            method: StepMethod::Rk45Adaptive {
                rtol: 1e-8,
                atol: 1e-10,
            },
            t_max: 60.0,
            stop_norm: 1e-8,
            max_steps: 1_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        match self.method {
            StepMethod::Rk4Fixed { step } if !(step > 0.0 && step.is_finite()) => {
                return Err(SimError::InvalidConfig(format!(
                    "rk4_fixed step must be positive, got {step}"
                )));
            }
            StepMethod::Rk45Adaptive { rtol, atol }
                if !(rtol > 0.0 && atol > 0.0 && rtol.is_finite() && atol.is_finite()) =>
            {
                return Err(SimError::InvalidConfig(format!(
                    "rk45_adaptive tolerances must be positive, got rtol = {rtol}, atol = {atol}"
                )));
            }
            _ => {}
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if self.stop_norm.is_nan() || self.stop_norm < 0.0 {
            return Err(SimError::InvalidConfig(format!(
                "stop_norm must be nonnegative, got {}",
                self.stop_norm
            )));
        }
        if self.max_steps == 0 {
            return Err(SimError::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    TMaxReached,
    StepLimit,
    ControllerError { at_time: f64, error: ControlError },
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Termination::Converged => write!(f, "converged"),
            Termination::TMaxReached => write!(f, "t_max_reached"),
            Termination::StepLimit => write!(f, "step_limit"),
            Termination::ControllerError { at_time, error } => {
                write!(f, "controller_error at t = {at_time}: {error}")
            }
        }
    }
}

/// Time-stamped closed-loop record. All recorded values are finite; times
/// are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub lambdas: Vec<f64>,
    pub v_values: Vec<f64>,
    pub integrand_j4: Vec<f64>,
    pub integrand_j5: Vec<f64>,
    pub j4_running: Vec<f64>,
    pub j5_running: Vec<f64>,
    pub termination: Termination,
    /// Truncation tail of `J4`, exactly `V(x(T))` by conservation.
    pub j4_tail_estimate: f64,
    /// Crude truncation bound for `J5`: `lambda_max * V(x(T))`.
    pub j5_tail_bound: f64,
}

impl Trajectory {
    /// Accumulated `(J4, J5)` at termination; `(0, 0)` for an empty record.
    pub fn costs(&self) -> (f64, f64) {
        (
            self.j4_running.last().copied().unwrap_or(0.0),
            self.j5_running.last().copied().unwrap_or(0.0),
        )
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `costs(traj)`: the accumulated integrals at termination.
pub fn costs(traj: &Trajectory) -> (f64, f64) {
    traj.costs()
}

/// Deviation of `J4` from the value identity, plus the worst stepwise drift
/// of the conserved quantity `V(x(t)) + J4(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueConsistency {
    /// `|J4 + V(x(T)) - V(x0)| / max(V(x0), 1e-12)` (tail-corrected).
    pub value_error: f64,
    /// `max_t |V(x(t)) + J4(t) - V(x0)| / max(V(x0), 1e-12)`.
    pub max_drift: f64,
}

/// Check `J4 = V(x0)` and the conservation identity along a converged
/// trajectory.
pub fn value_consistency(
    traj: &Trajectory,
    clf: &ClfCandidate,
    x0: &DVector<f64>,
) -> Result<ValueConsistency, SimError> {
    if traj.termination != Termination::Converged {
        return Err(SimError::NotConverged {
            termination: traj.termination.to_string(),
        });
    }
    let v0 = clf.value(x0)?;
    let scale = v0.max(1e-12);
    let (j4, _) = traj.costs();
    let v_final = traj.v_values.last().copied().unwrap_or(0.0);
    let value_error = (j4 + v_final - v0).abs() / scale;
    let mut max_drift = 0.0f64;
    for (v, j) in traj.v_values.iter().zip(&traj.j4_running) {
        max_drift = max_drift.max((v + j - v0).abs() / scale);
    }
    Ok(ValueConsistency {
        value_error,
        max_drift,
    })
}

struct Loop<'a> {
    ctrl: &'a dyn StateFeedback,
    system: &'a SystemModel,
    clf: &'a ClfCandidate,
    weights: &'a Weights,
    n: usize,
}

impl<'a> Loop<'a> {
    /// Derivative of the augmented state `(x, J4, J5)`.
    fn derivative(&self, z: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
        let x = z.rows(0, self.n).into_owned();
        let sig = self.ctrl.control(&x)?;
        let xdot = self.system.drift_at(&x)? + self.system.input_at(&x)? * &sig.u;
        let s = self.weights.state_cost(&x) + self.weights.input_cost(&sig.u);
        let mut out = DVector::zeros(self.n + 2);
        out.rows_mut(0, self.n).copy_from(&xdot);
        out[self.n] = 0.5 * s / sig.lambda;
        out[self.n + 1] = 0.5 * s;
        Ok(out)
    }

    fn record(&self, traj: &mut Trajectory, t: f64, z: &DVector<f64>) -> Result<(), ControlError> {
        let x = z.rows(0, self.n).into_owned();
        let sig = self.ctrl.control(&x)?;
        let v = self.clf.value(&x)?;
        let s = self.weights.state_cost(&x) + self.weights.input_cost(&sig.u);
        traj.times.push(t);
        traj.inputs.push(sig.u);
        traj.lambdas.push(sig.lambda);
        traj.v_values.push(v);
        traj.integrand_j4.push(0.5 * s / sig.lambda);
        traj.integrand_j5.push(0.5 * s);
        traj.j4_running.push(z[self.n]);
        traj.j5_running.push(z[self.n + 1]);
        traj.states.push(x);
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau; stage times are not needed for an
// autonomous closed loop.
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

enum Attempt {
    Accepted { z_next: DVector<f64>, dt: f64 },
    Rejected,
    Failed(ControlError),
}

/// Integrate the closed loop from `x0`.
///
/// A controller failure mid-trajectory is not an error: the partial
/// trajectory is returned with a `ControllerError` termination. Hard errors
/// are reserved for non-finite states and integrator breakdown.
pub fn simulate(
    ctrl: &dyn StateFeedback,
    system: &SystemModel,
    clf: &ClfCandidate,
    weights: &Weights,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let n = system.state_dim();
    if x0.len() != n {
        return Err(SimError::DimensionMismatch {
            expected: n,
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteState { t: 0.0 });
    }

    let lp = Loop {
        ctrl,
        system,
        clf,
        weights,
        n,
    };
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        inputs: Vec::new(),
        lambdas: Vec::new(),
        v_values: Vec::new(),
        integrand_j4: Vec::new(),
        integrand_j5: Vec::new(),
        j4_running: Vec::new(),
        j5_running: Vec::new(),
        termination: Termination::TMaxReached,
        j4_tail_estimate: 0.0,
        j5_tail_bound: 0.0,
    };

    let mut z = DVector::zeros(n + 2);
    z.rows_mut(0, n).copy_from(x0);
    let mut t = 0.0;

    if let Err(error) = lp.record(&mut traj, t, &z) {
        traj.termination = Termination::ControllerError { at_time: t, error };
        return Ok(traj);
    }

    if x0.norm() <= cfg.stop_norm {
        traj.termination = Termination::Converged;
        finish_tails(&lp, &mut traj);
        return Ok(traj);
    }

    let horizon_slack = 1e-12 * cfg.t_max.max(1.0);
    let mut steps = 0usize;
    let mut h = match cfg.method {
        StepMethod::Rk4Fixed { step } => step,
        StepMethod::Rk45Adaptive { .. } => 1e-3f64.min(cfg.t_max),
    };

    loop {
        if cfg.t_max - t <= horizon_slack {
            traj.termination = Termination::TMaxReached;
            break;
        }
        if steps >= cfg.max_steps {
            traj.termination = Termination::StepLimit;
            break;
        }
        steps += 1;

        let attempt = match cfg.method {
            StepMethod::Rk4Fixed { step } => {
                let dt = step.min(cfg.t_max - t);
                match rk4_step(&lp, &z, dt) {
                    Ok(z_next) => Attempt::Accepted { z_next, dt },
                    Err(e) => Attempt::Failed(e),
                }
            }
            StepMethod::Rk45Adaptive { rtol, atol } => {
                h = h.min(cfg.t_max - t);
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(SimError::StepSizeUnderflow { t });
                }
                let dt = h;
                match rk45_step(&lp, &z, dt, rtol, atol) {
                    Err(e) => Attempt::Failed(e),
                    Ok((z_next, error_ratio)) => {
                        let scale = if error_ratio == 0.0 {
                            5.0
                        } else {
                            (0.9 * error_ratio.powf(-0.2)).clamp(0.2, 5.0)
                        };
                        h = dt * scale;
                        if error_ratio <= 1.0 {
                            Attempt::Accepted { z_next, dt }
                        } else {
                            Attempt::Rejected
                        }
                    }
                }
            }
        };

        match attempt {
            Attempt::Rejected => continue,
            Attempt::Failed(error) => {
                traj.termination = Termination::ControllerError { at_time: t, error };
                break;
            }
            Attempt::Accepted { z_next, dt } => {
                if z_next.iter().any(|v| !v.is_finite()) {
                    return Err(SimError::NonFiniteState { t: t + dt });
                }
                t += dt;
                z = z_next;
                if let Err(error) = lp.record(&mut traj, t, &z) {
                    traj.termination = Termination::ControllerError { at_time: t, error };
                    break;
                }
                if z.rows(0, n).norm() <= cfg.stop_norm {
                    traj.termination = Termination::Converged;
                    break;
                }
            }
        }
    }

    finish_tails(&lp, &mut traj);
    Ok(traj)
}

fn finish_tails(lp: &Loop, traj: &mut Trajectory) {
    if let Some(x_final) = traj.states.last() {
        let v_final = lp.clf.value(x_final).unwrap_or(0.0);
        let lambda_max = traj
            .lambdas
            .iter()
            .copied()
            .fold(1.0f64, f64::max);
        traj.j4_tail_estimate = v_final;
        traj.j5_tail_bound = lambda_max * v_final;
    }
}

fn rk4_step(lp: &Loop, z: &DVector<f64>, h: f64) -> Result<DVector<f64>, ControlError> {
    let k1 = lp.derivative(z)?;
    let k2 = lp.derivative(&(z + &k1 * (h / 2.0)))?;
    let k3 = lp.derivative(&(z + &k2 * (h / 2.0)))?;
    let k4 = lp.derivative(&(z + &k3 * h))?;
    Ok(z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// One Dormand-Prince attempt: the order-5 candidate and the max
/// component-wise error ratio against `atol + rtol * |value|`.
fn rk45_step(
    lp: &Loop,
    z: &DVector<f64>,
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<(DVector<f64>, f64), ControlError> {
    let dim = z.len();
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    for a_row in &DP_A {
        let mut zs = z.clone();
        for (j, kj) in k.iter().enumerate() {
            if a_row[j] != 0.0 {
                zs += kj * (a_row[j] * h);
            }
        }
        k.push(lp.derivative(&zs)?);
    }
    let mut z5 = z.clone();
    let mut z4 = z.clone();
    for (j, kj) in k.iter().enumerate() {
        if DP_B5[j] != 0.0 {
            z5 += kj * (DP_B5[j] * h);
        }
        if DP_B4[j] != 0.0 {
            z4 += kj * (DP_B4[j] * h);
        }
    }
    let mut ratio = 0.0f64;
    for i in 0..dim {
        let tol = atol + rtol * z[i].abs().max(z5[i].abs());
        ratio = ratio.max((z5[i] - z4[i]).abs() / tol);
    }
    Ok((z5, ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression;
    use approx::assert_relative_eq;

    fn expr(src: &str, dim: usize) -> Expression {
        Expression::parse(src, dim).unwrap()
    }

    fn scalar_setup(f: &str, q: f64, r: f64) -> (SystemModel, ClfCandidate, Weights) {
        let sys = SystemModel::new(vec![expr(f, 1)], vec![vec![expr("1", 1)]]).unwrap();
        let clf = ClfCandidate::new(expr("0.5*x1^2", 1)).unwrap();
        let w = Weights::new(
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, r),
        )
        .unwrap();
        (sys, clf, w)
    }

    fn sontag(sys: &SystemModel, clf: &ClfCandidate, w: &Weights) -> SontagController {
        SontagController::new_unchecked(sys.clone(), clf.clone(), w.clone()).unwrap()
    }

    fn double_integrator_riccati() -> (SystemModel, ClfCandidate, Weights, DMatrix<f64>) {
        let sys = SystemModel::new(
            vec![expr("x2", 2), expr("0", 2)],
            vec![vec![expr("0", 2)], vec![expr("1", 2)]],
        )
        .unwrap();
        let s3 = 3f64.sqrt();
        let clf = ClfCandidate::new(expr(
            &format!("0.5*({s3:?}*x1^2 + 2*x1*x2 + {s3:?}*x2^2)"),
            2,
        ))
        .unwrap();
        let w = Weights::identity(2, 1);
        let k = DMatrix::from_row_slice(1, 2, &[1.0, s3]);
        (sys, clf, w, k)
    }

    #[test]
    fn pure_integrator_decays_like_exp_minus_t() {
        // x' = u with V = x^2/2, Q = R = 1 closes the loop to x' = -x
        let (sys, clf, w) = scalar_setup("0", 1.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        let cfg = SimConfig {
            t_max: 1.0,
            stop_norm: 0.0,
            ..SimConfig::default()
        };
        let traj = simulate(&ctrl, &sys, &clf, &w, &DVector::from_vec(vec![1.0]), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::TMaxReached);
        let x_end = traj.states.last().unwrap()[0];
        assert!(
            (x_end - (-1.0f64).exp()).abs() < 1e-7,
            "x(1) = {x_end}, expected {}",
            (-1.0f64).exp()
        );
    }

    #[test]
    fn equilibrium_start_terminates_immediately() {
        let (sys, clf, w) = scalar_setup("0", 1.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        let traj = simulate(
            &ctrl,
            &sys,
            &clf,
            &w,
            &DVector::zeros(1),
            &SimConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.costs(), (0.0, 0.0));
    }

    #[test]
    fn double_integrator_lqr_cost_is_half_x0_p_x0() {
        let (sys, clf, w, k) = double_integrator_riccati();
        let lqr = LinearFeedback::new(k);
        let traj = simulate(
            &lqr,
            &sys,
            &clf,
            &w,
            &DVector::from_vec(vec![1.0, 0.0]),
            &SimConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        assert!(traj.states.last().unwrap().norm() < 1e-8);
        let (j4, j5) = traj.costs();
        let expected = 3f64.sqrt() / 2.0;
        assert_relative_eq!(j5, expected, max_relative = 5e-3);
        assert_relative_eq!(j5, 0.866025404, max_relative = 5e-3);
        // lambda == 1 makes both integrands identical arithmetic
        assert_eq!(j4.to_bits(), j5.to_bits());
        for (a, b) in traj.j4_running.iter().zip(&traj.j5_running) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn integrator_with_heavy_state_weight_costs() {
        // Q = 4, R = 1: u = -2x, loop x' = -2x; J4 = 1/2 int 2 e^{-4t} 4 x0^2...
        // hand quadrature gives J4 = 0.5 and J5 = 1.0 from x0 = 1
        let (sys, clf, w) = scalar_setup("0", 4.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        let traj = simulate(
            &ctrl,
            &sys,
            &clf,
            &w,
            &DVector::from_vec(vec![1.0]),
            &SimConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        let (j4, j5) = traj.costs();
        assert_relative_eq!(j4, 0.5, max_relative = 5e-3);
        assert_relative_eq!(j5, 1.0, max_relative = 5e-3);
        let vc = value_consistency(&traj, &clf, &DVector::from_vec(vec![1.0])).unwrap();
        assert!(vc.value_error < 5e-3, "value error {}", vc.value_error);
    }

    #[test]
    fn cubic_j4_equals_v_of_x0() {
        let (sys, clf, w) = scalar_setup("x1^3", 1.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        let x0 = DVector::from_vec(vec![1.0]);
        let traj = simulate(&ctrl, &sys, &clf, &w, &x0, &SimConfig::default()).unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        let (j4, _) = traj.costs();
        assert_relative_eq!(j4, 0.5, max_relative = 5e-3);
        let vc = value_consistency(&traj, &clf, &x0).unwrap();
        assert!(vc.value_error < 5e-3);
        assert!(vc.max_drift < 1e-5, "drift {}", vc.max_drift);
    }

    #[test]
    fn conservation_and_monotonicity_along_sontag_trajectories() {
        let (sys, clf, w) = scalar_setup("x1^3", 1.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        for x0v in [0.5, 1.0, 2.0, -1.5] {
            let x0 = DVector::from_vec(vec![x0v]);
            let traj = simulate(&ctrl, &sys, &clf, &w, &x0, &SimConfig::default()).unwrap();
            assert_eq!(traj.termination, Termination::Converged);
            let vc = value_consistency(&traj, &clf, &x0).unwrap();
            assert!(vc.max_drift < 1e-5, "drift {} from {x0v}", vc.max_drift);
            for pair in traj.v_values.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-7, "V increased: {pair:?}");
            }
            assert!(traj.times.windows(2).all(|p| p[1] > p[0]));
            assert!(traj.v_values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn rk4_global_error_is_fourth_order() {
        let (sys, clf, w) = scalar_setup("0", 1.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        let x0 = DVector::from_vec(vec![1.0]);
        let err_at = |step: f64| {
            let cfg = SimConfig {
                method: StepMethod::Rk4Fixed { step },
                t_max: 1.0,
                stop_norm: 0.0,
                max_steps: 1_000_000,
            };
            let traj = simulate(&ctrl, &sys, &clf, &w, &x0, &cfg).unwrap();
            (traj.states.last().unwrap()[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err_at(0.1) / err_at(0.05);
        assert!(
            (12.0..=20.0).contains(&ratio),
            "halving the step changed the error by {ratio}"
        );
    }

    #[test]
    fn controller_failure_returns_partial_trajectory() {
        // x' = x with zero input column: CLF condition fails at every state
        let sys = SystemModel::new(vec![expr("x1", 1)], vec![vec![expr("0", 1)]]).unwrap();
        let clf = ClfCandidate::new(expr("0.5*x1^2", 1)).unwrap();
        let w = Weights::identity(1, 1);
        let ctrl = sontag(&sys, &clf, &w);
        let traj = simulate(
            &ctrl,
            &sys,
            &clf,
            &w,
            &DVector::from_vec(vec![1.0]),
            &SimConfig::default(),
        )
        .unwrap();
        assert!(matches!(
            traj.termination,
            Termination::ControllerError { .. }
        ));
        assert!(traj.is_empty());
        assert_eq!(traj.costs(), (0.0, 0.0));
        assert!(value_consistency(&traj, &clf, &DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn tail_estimates_reported() {
        let (sys, clf, w) = scalar_setup("0", 1.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        let cfg = SimConfig {
            t_max: 1.0,
            stop_norm: 0.0,
            ..SimConfig::default()
        };
        let traj = simulate(&ctrl, &sys, &clf, &w, &DVector::from_vec(vec![1.0]), &cfg).unwrap();
        let x_end = traj.states.last().unwrap()[0];
        assert_relative_eq!(traj.j4_tail_estimate, 0.5 * x_end * x_end, epsilon = 1e-15);
        assert!(traj.j5_tail_bound >= traj.j4_tail_estimate);
        // J4 + tail reproduces V(x0) even on a truncated run
        let (j4, _) = traj.costs();
        assert_relative_eq!(j4 + traj.j4_tail_estimate, 0.5, max_relative = 1e-6);
    }

    #[test]
    fn config_validation() {
        let bad = SimConfig {
            method: StepMethod::Rk4Fixed { step: 0.0 },
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(SimError::InvalidConfig(_))));
        let bad = SimConfig {
            t_max: -1.0,
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn fixed_step_damped_linear_two_state() {
        // LQR on the double integrator under rk4 with a modest step still
        // converges and satisfies the conservation identity loosely
        let (sys, clf, w, k) = double_integrator_riccati();
        let lqr = LinearFeedback::new(k);
        let cfg = SimConfig {
            method: StepMethod::Rk4Fixed { step: 0.005 },
            ..SimConfig::default()
        };
        let x0 = DVector::from_vec(vec![1.0, 0.0]);
        let traj = simulate(&lqr, &sys, &clf, &w, &x0, &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        let vc = value_consistency(&traj, &clf, &x0).unwrap();
        assert!(vc.value_error < 5e-3);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (sys, clf, w) = scalar_setup("0", 1.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        let err = simulate(
            &ctrl,
            &sys,
            &clf,
            &w,
            &DVector::zeros(2),
            &SimConfig::default(),
        )
        .unwrap_err();
        assert_eq!(
            err,
            SimError::DimensionMismatch {
                expected: 1,
                got: 2
            }
        );
    }

    #[test]
    fn lambda_is_constant_for_the_damped_scalar_system() {
        // x' = -x + u with V = x^2/2, Q = R = 1: lambda = sqrt(2) - 1 at
        // every state, so J4 = (sqrt2 + 1) J5... the ratio of the two costs
        // is exactly lambda
        let (sys, clf, w) = scalar_setup("-x1", 1.0, 1.0);
        let ctrl = sontag(&sys, &clf, &w);
        let traj = simulate(
            &ctrl,
            &sys,
            &clf,
            &w,
            &DVector::from_vec(vec![1.0]),
            &SimConfig::default(),
        )
        .unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        let lam = 2f64.sqrt() - 1.0;
        for l in &traj.lambdas {
            assert_relative_eq!(*l, lam, max_relative = 1e-9);
        }
        let (j4, j5) = traj.costs();
        assert_relative_eq!(j4 * lam, j5, max_relative = 1e-6);
    }
}
