//! Experiment execution: checks, simulations, CSV trajectories, and the
//! JSON summary.
//!
//! Exit semantics: config or runtime failures are errors (exit 1); a clean
//! run returns `Passed` only when every requested check passed and every
//! trajectory converged, otherwise `CheckFailed` (exit 2).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clfkit::hjb::{verify_lambda_identity, HjbTolerances};
use clfkit::model::{check_clf, SamplingConfig};
use clfkit::sim::{simulate, value_consistency, Termination, Trajectory};
use clfkit::sontag::{Branch, SontagController};
use serde::Serialize;

use crate::config::{build, load};

/// Residual bound factor for the distorted-HJB check on the regular branch.
const RESIDUAL_BOUND_REGULAR: f64 = 1e-9;
/// Relaxed factor on the series branch.
const RESIDUAL_BOUND_SERIES: f64 = 1e-8;
/// Relative tolerance for the value-consistency check.
const VALUE_CONSISTENCY_TOL: f64 = 5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Passed,
    CheckFailed,
}

#[derive(Serialize)]
struct Summary {
    controller: ControllerMeta,
    checks: CheckSummaries,
    trajectories: Vec<TrajectorySummary>,
    all_passed: bool,
}

#[derive(Serialize)]
struct ControllerMeta {
    state_dim: usize,
    input_dim: usize,
    clf_source: &'static str,
    clf: String,
    beta_tol: f64,
    origin_tol: f64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    riccati_gain: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize, Default)]
struct CheckSummaries {
    #[serde(skip_serializing_if = "Option::is_none")]
    clf_check: Option<ClfCheckSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_identity: Option<LambdaIdentitySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hjb_residuals: Option<HjbResidualSummary>,
}

#[derive(Serialize)]
struct ClfCheckSummary {
    samples: usize,
    positivity_violations: usize,
    condition_violations: usize,
    eval_failures: usize,
    radially_unbounded: bool,
    example_violation_states: Vec<Vec<f64>>,
    passed: bool,
}

#[derive(Serialize)]
struct LambdaIdentitySummary {
    samples: usize,
    max_abs_residual: f64,
    max_lambda_deviation: f64,
    skipped_small_b: usize,
    failures: usize,
    passed: bool,
}

#[derive(Serialize)]
struct HjbResidualSummary {
    samples: usize,
    max_abs_residual: f64,
    /// Worst `|residual| / bound` with the branch-dependent bound; must stay
    /// at or below 1.
    worst_normalized_residual: f64,
    series_branch_states: usize,
    failures: usize,
    passed: bool,
}

#[derive(Serialize)]
struct LambdaStats {
    min: f64,
    max: f64,
    mean: f64,
}

#[derive(Serialize)]
struct ValueConsistencySummary {
    relative_error: f64,
    max_drift: f64,
    passed: bool,
}

#[derive(Serialize)]
struct TrajectorySummary {
    index: usize,
    initial_state: Vec<f64>,
    termination: String,
    converged: bool,
    records: usize,
    final_time: f64,
    j4: f64,
    j5: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_at_start: Option<f64>,
    j4_tail_estimate: f64,
    j5_tail_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<LambdaStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value_consistency: Option<ValueConsistencySummary>,
}

/// Schema/dimension/definiteness validation only; no computation.
pub fn validate(config_path: &Path) -> Result<()> {
    let config = load(config_path)?;
    build(&config, None)?;
    Ok(())
}

/// Full experiment: checks, simulations, artifact files.
pub fn run(
    config_path: &Path,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
) -> Result<RunStatus> {
    let config = load(config_path)?;
    let experiment = build(&config, seed_override)?;
    let out_dir = out_override
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    let controller = SontagController::new_unchecked(
        experiment.system.clone(),
        experiment.clf.clone(),
        experiment.weights.clone(),
    )
    .map_err(|e| anyhow::anyhow!("controller construction failed: {e}"))?;

    let sampling = SamplingConfig {
        seed: experiment.seed,
        ..SamplingConfig::default()
    };

    let mut checks = CheckSummaries::default();
    let mut all_passed = true;

    if experiment.checks.clf_check {
        let report = check_clf(&experiment.system, &experiment.clf, &sampling);
        let example_violation_states = report
            .positivity_violations
            .iter()
            .map(|v| v.state.clone())
            .chain(report.condition_violations.iter().map(|v| v.state.clone()))
            .take(5)
            .collect();
        all_passed &= report.passed;
        checks.clf_check = Some(ClfCheckSummary {
            samples: report.samples,
            positivity_violations: report.positivity_violations.len(),
            condition_violations: report.condition_violations.len(),
            eval_failures: report.eval_failures.len(),
            radially_unbounded: report.radially_unbounded,
            example_violation_states,
            passed: report.passed,
        });
    }

    if experiment.checks.lambda_identity {
        let report = verify_lambda_identity(
            &experiment.system,
            &experiment.clf,
            &experiment.weights,
            &sampling,
            &HjbTolerances::default(),
        );
        all_passed &= report.passed;
        checks.lambda_identity = Some(LambdaIdentitySummary {
            samples: report.samples,
            max_abs_residual: report.max_abs_residual,
            max_lambda_deviation: report.max_lambda_deviation,
            skipped_small_b: report.skipped_small_b,
            failures: report.failures,
            passed: report.passed,
        });
    }

    if experiment.checks.hjb_residuals {
        let summary = hjb_residual_check(&controller, &sampling);
        all_passed &= summary.passed;
        checks.hjb_residuals = Some(summary);
    }

    let mut trajectories = Vec::new();
    for (index, x0) in experiment.initial_states.iter().enumerate() {
        let traj = simulate(
            &controller,
            &experiment.system,
            &experiment.clf,
            &experiment.weights,
            x0,
            &experiment.sim,
        )
        .map_err(|e| anyhow::anyhow!("simulation from initial state {index} failed: {e}"))?;

        let csv_path = out_dir.join(format!("traj_{index}.csv"));
        write_trajectory_csv(
            &csv_path,
            experiment.system.state_dim(),
            experiment.system.input_dim(),
            &traj,
        )
        .with_context(|| format!("cannot write {}", csv_path.display()))?;

        let converged = traj.termination == Termination::Converged;
        all_passed &= converged;

        let vc = if experiment.checks.value_consistency && converged {
            let vc = value_consistency(&traj, &experiment.clf, x0)
                .map_err(|e| anyhow::anyhow!("value-consistency evaluation failed: {e}"))?;
            let passed = vc.value_error < VALUE_CONSISTENCY_TOL;
            all_passed &= passed;
            Some(ValueConsistencySummary {
                relative_error: vc.value_error,
                max_drift: vc.max_drift,
                passed,
            })
        } else {
            None
        };

        let (j4, j5) = traj.costs();
        trajectories.push(TrajectorySummary {
            index,
            initial_state: x0.as_slice().to_vec(),
            termination: traj.termination.to_string(),
            converged,
            records: traj.len(),
            final_time: traj.times.last().copied().unwrap_or(0.0),
            j4,
            j5,
            v_at_start: experiment.clf.value(x0).ok(),
            j4_tail_estimate: traj.j4_tail_estimate,
            j5_tail_bound: traj.j5_tail_bound,
            lambda: lambda_stats(&traj, controller.origin_tol()),
            value_consistency: vc,
        });
    }

    let summary = Summary {
        controller: ControllerMeta {
            state_dim: experiment.system.state_dim(),
            input_dim: experiment.system.input_dim(),
            clf_source: experiment.clf_source,
            clf: experiment.clf.expression().to_string(),
            beta_tol: controller.beta_tol(),
            origin_tol: controller.origin_tol(),
            seed: experiment.seed,
            riccati_gain: experiment.care.as_ref().map(|sol| {
                (0..sol.k.nrows())
                    .map(|i| (0..sol.k.ncols()).map(|j| sol.k[(i, j)]).collect())
                    .collect()
            }),
        },
        checks,
        trajectories,
        all_passed,
    };
    let summary_path = out_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("cannot write {}", summary_path.display()))?;

    Ok(if all_passed {
        RunStatus::Passed
    } else {
        RunStatus::CheckFailed
    })
}

/// Distorted-HJB residual over the sample, with the branch-dependent bound
/// `1e-9 * max(1, x'Qx)` (regular) or `1e-8 * max(1, x'Qx)` (series).
fn hjb_residual_check(ctrl: &SontagController, sampling: &SamplingConfig) -> HjbResidualSummary {
    let mut max_abs = 0.0f64;
    let mut worst_normalized = 0.0f64;
    let mut series_states = 0usize;
    let mut failures = 0usize;
    for x in clfkit::model::sample_states(ctrl.system().state_dim(), sampling) {
        let ev = match ctrl.feedback(&x) {
            Ok(ev) => ev,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let q = ctrl.weights().state_cost(&x);
        let beta = ev.b.dot(&ctrl.weights().r_solve(&ev.b));
        let residual = 0.5 * q - 0.5 * ev.lambda * ev.lambda * beta + ev.lambda * ev.a;
        let factor = match ev.branch {
            Branch::Series => {
                series_states += 1;
                RESIDUAL_BOUND_SERIES
            }
            _ => RESIDUAL_BOUND_REGULAR,
        };
        let bound = factor * q.max(1.0);
        max_abs = max_abs.max(residual.abs());
        worst_normalized = worst_normalized.max(residual.abs() / bound);
    }
    HjbResidualSummary {
        samples: sampling.samples,
        max_abs_residual: max_abs,
        worst_normalized_residual: worst_normalized,
        series_branch_states: series_states,
        failures,
        passed: failures == 0 && worst_normalized <= 1.0,
    }
}

/// Statistics over recorded `lambda`, restricted to states outside the
/// origin ball (the factor is undefined at the equilibrium).
fn lambda_stats(traj: &Trajectory, origin_tol: f64) -> Option<LambdaStats> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, lambda) in traj.states.iter().zip(&traj.lambdas) {
        if x.norm() > origin_tol {
            min = min.min(*lambda);
            max = max.max(*lambda);
            sum += lambda;
            count += 1;
        }
    }
    if count == 0 {
        return None;
    }
    Some(LambdaStats {
        min,
        max,
        mean: sum / count as f64,
    })
}

/// Fixed column layout: `t, x1..xn, u1..um, V, lambda, integrand_j4,
/// integrand_j5, j4_running, j5_running`, 17 significant digits.
fn write_trajectory_csv(path: &Path, n: usize, m: usize, traj: &Trajectory) -> Result<()> {
    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    for i in 1..=m {
        let _ = write!(out, ",u{i}");
    }
    out.push_str(",V,lambda,integrand_j4,integrand_j5,j4_running,j5_running\n");
    for k in 0..traj.len() {
        let _ = write!(out, "{:.16e}", traj.times[k]);
        for v in traj.states[k].iter() {
            let _ = write!(out, ",{v:.16e}");
        }
        for v in traj.inputs[k].iter() {
            let _ = write!(out, ",{v:.16e}");
        }
        let _ = writeln!(
            out,
            ",{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            traj.v_values[k],
            traj.lambdas[k],
            traj.integrand_j4[k],
            traj.integrand_j5[k],
            traj.j4_running[k],
            traj.j5_running[k],
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}
