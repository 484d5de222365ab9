//! Experiment configuration: the published JSON schema and its validation.
//!
//! Field names are fixed; unknown fields are rejected so that typos fail
//! loudly. `validate` performs schema, dimension, and definiteness checks
//! without running anything.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clfkit::care::{solve_care, CareSolution, LinearSystem, SolverOptions};
use clfkit::catalog;
use clfkit::expr::Expression;
use clfkit::hjb::{verify_lambda_identity, HjbTolerances};
use clfkit::model::{
    check_weights, sample_states, ClfCandidate, SamplingConfig, SystemModel, Weights,
};
use clfkit::sim::{SimConfig, StepMethod};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    /// A CLF expression over `x1..xn`, or the directive `"riccati"` to use
    /// `x'Px/2` from the Riccati solution (linear systems only).
    pub clf: String,
    pub weights: WeightsSpec,
    pub initial_states: Vec<Vec<f64>>,
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub checks: ChecksSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Catalog(CatalogRef),
    Inline(InlineSystem),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogRef {
    pub catalog: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub n: usize,
    pub m: usize,
    pub f: Vec<String>,
    pub g: Vec<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    /// Row-major `n x n`.
    pub q: Vec<Vec<f64>>,
    /// Row-major `m x m`.
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// `"rk4_fixed"` (requires `step`) or `"rk45_adaptive"`.
    pub method: String,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
    pub t_max: f64,
    #[serde(default)]
    pub stop_norm: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSpec {
    pub clf_check: bool,
    pub lambda_identity: bool,
    pub hjb_residuals: bool,
    pub value_consistency: bool,
}

/// A fully validated, ready-to-run experiment.
pub struct Experiment {
    pub system: SystemModel,
    pub clf: ClfCandidate,
    /// `"expression"` or `"riccati"`.
    pub clf_source: &'static str,
    pub weights: Weights,
    pub initial_states: Vec<DVector<f64>>,
    pub sim: SimConfig,
    pub checks: ChecksSpec,
    pub seed: u64,
    /// Present when the CLF came from the Riccati directive.
    pub care: Option<CareSolution>,
}

/// Parse the config file, reporting the JSON path of any schema violation.
pub fn load(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(&mut de)
        .map_err(|e| anyhow::anyhow!("config field `{}`: {}", e.path(), e.inner()))?;
    Ok(config)
}

/// Resolve and cross-check everything the run needs.
pub fn build(config: &ExperimentConfig, seed_override: Option<u64>) -> Result<Experiment> {
    let seed = seed_override.unwrap_or(config.seed);

    let system = match &config.system {
        SystemSpec::Catalog(c) => catalog::get_entry(&c.catalog)
            .with_context(|| "config field `system.catalog`")?
            .system,
        SystemSpec::Inline(inline) => build_inline_system(inline)?,
    };
    let n = system.state_dim();
    let m = system.input_dim();

    let q = matrix_from_rows("weights.q", &config.weights.q, n)?;
    let r = matrix_from_rows("weights.r", &config.weights.r, m)?;
    check_weights(&q, &r).map_err(|e| anyhow::anyhow!("config field `weights`: {e}"))?;
    let weights = Weights::new(q, r).expect("just validated");

    let (clf, clf_source, care) = if config.clf.trim() == "riccati" {
        let linear = detect_linear_system(&system, seed)?;
        let solution = solve_care(&linear, &weights, &SolverOptions::default())
            .with_context(|| "config field `clf`: solving the Riccati equation failed")?;
        let clf = clfkit::care::riccati_clf(&solution);
        (clf, "riccati", Some(solution))
    } else {
        let expr = Expression::parse(&config.clf, n)
            .map_err(|e| anyhow::anyhow!("config field `clf`: {e}"))?;
        let clf =
            ClfCandidate::new(expr).map_err(|e| anyhow::anyhow!("config field `clf`: {e}"))?;
        (clf, "expression", None)
    };

    if config.initial_states.is_empty() {
        bail!("config field `initial_states`: at least one initial state is required");
    }
    let mut initial_states = Vec::with_capacity(config.initial_states.len());
    for (k, x0) in config.initial_states.iter().enumerate() {
        if x0.len() != n {
            bail!(
                "config field `initial_states[{k}]`: expected {n} components, got {}",
                x0.len()
            );
        }
        if x0.iter().any(|v| !v.is_finite()) {
            bail!("config field `initial_states[{k}]`: all components must be finite");
        }
        initial_states.push(DVector::from_vec(x0.clone()));
    }

    let sim = build_sim_config(&config.simulation)?;
    sim.validate()
        .map_err(|e| anyhow::anyhow!("config field `simulation`: {e}"))?;

    Ok(Experiment {
        system,
        clf,
        clf_source,
        weights,
        initial_states,
        sim,
        checks: config.checks,
        seed,
        care,
    })
}

fn build_inline_system(inline: &InlineSystem) -> Result<SystemModel> {
    if inline.f.len() != inline.n {
        bail!(
            "config field `system.f`: expected {} drift expressions, got {}",
            inline.n,
            inline.f.len()
        );
    }
    if inline.g.len() != inline.n || inline.g.iter().any(|row| row.len() != inline.m) {
        bail!(
            "config field `system.g`: expected a {}x{} matrix of expressions",
            inline.n,
            inline.m
        );
    }
    let mut drift = Vec::with_capacity(inline.n);
    for (i, src) in inline.f.iter().enumerate() {
        drift.push(
            Expression::parse(src, inline.n)
                .map_err(|e| anyhow::anyhow!("config field `system.f[{i}]`: {e}"))?,
        );
    }
    let mut input = Vec::with_capacity(inline.n);
    for (i, row) in inline.g.iter().enumerate() {
        let mut out = Vec::with_capacity(inline.m);
        for (j, src) in row.iter().enumerate() {
            out.push(
                Expression::parse(src, inline.n)
                    .map_err(|e| anyhow::anyhow!("config field `system.g[{i}][{j}]`: {e}"))?,
            );
        }
        input.push(out);
    }
    SystemModel::new(drift, input).map_err(|e| anyhow::anyhow!("config field `system`: {e}"))
}

fn matrix_from_rows(field: &str, rows: &[Vec<f64>], expected: usize) -> Result<DMatrix<f64>> {
    if rows.len() != expected || rows.iter().any(|r| r.len() != expected) {
        bail!(
            "config field `{field}`: expected a {expected}x{expected} matrix, got {}x{}",
            rows.len(),
            rows.first().map_or(0, Vec::len)
        );
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        bail!("config field `{field}`: all entries must be finite");
    }
    Ok(DMatrix::from_row_slice(expected, expected, &flat))
}

fn build_sim_config(spec: &SimulationSpec) -> Result<SimConfig> {
    let method = match spec.method.as_str() {
        "rk4_fixed" => {
            let step = spec.step.context(
                "config field `simulation.step`: required for method \"rk4_fixed\"",
            )?;
            StepMethod::Rk4Fixed { step }
        }
        "rk45_adaptive" => StepMethod::Rk45Adaptive {
            rtol: spec.rtol.unwrap_or(1e-8),
            atol: spec.atol.unwrap_or(1e-10),
        },
        other => bail!(
            "config field `simulation.method`: unknown method `{other}` \
             (expected \"rk4_fixed\" or \"rk45_adaptive\")"
        ),
    };
    Ok(SimConfig {
        method,
        t_max: spec.t_max,
        stop_norm: spec.stop_norm.unwrap_or(1e-8),
        max_steps: spec.max_steps.unwrap_or(1_000_000),
    })
}

/// Extract `(A, B)` from a system whose drift is affine and whose input
/// matrix is constant, verified by second differences at seeded random
/// points; anything non-affine is a config error.
fn detect_linear_system(system: &SystemModel, seed: u64) -> Result<LinearSystem> {
    let n = system.state_dim();
    let probe = SamplingConfig {
        samples: 4,
        r_min: 0.3,
        r_max: 1.7,
        b_epsilon: 1e-9,
        seed,
    };
    let points = sample_states(n, &probe);
    let h = 0.5;

    let value = |x: &DVector<f64>| -> Result<DVector<f64>> {
        system
            .drift_at(x)
            .map_err(|e| anyhow::anyhow!("config field `clf`: drift evaluation failed: {e}"))
    };
    for x in &points {
        let base = value(x)?;
        for i in 0..n {
            for j in i..n {
                let mut xi = x.clone();
                xi[i] += h;
                let mut xj = x.clone();
                xj[j] += h;
                let mut xij = x.clone();
                xij[i] += h;
                xij[j] += h;
                let second = value(&xij)? - value(&xi)? - value(&xj)? + &base;
                for (row, d2) in second.iter().enumerate() {
                    if d2.abs() > 1e-8 * base[row].abs().max(1.0) {
                        bail!(
                            "config field `clf`: the riccati directive requires an affine \
                             drift, but f{} has curvature (second difference {d2:.3e} in \
                             directions x{}, x{})",
                            row + 1,
                            i + 1,
                            j + 1
                        );
                    }
                }
            }
        }
    }

    let origin = DVector::zeros(n);
    let b = system
        .input_at(&origin)
        .map_err(|e| anyhow::anyhow!("config field `clf`: input-matrix evaluation failed: {e}"))?;
    for x in &points {
        let gx = system.input_at(x).map_err(|e| {
            anyhow::anyhow!("config field `clf`: input-matrix evaluation failed: {e}")
        })?;
        let diff = (&gx - &b).norm();
        if diff > 1e-9 * b.norm().max(1.0) {
            bail!(
                "config field `clf`: the riccati directive requires a constant input \
                 matrix, but G varies with x (|G(x) - G(0)| = {diff:.3e})"
            );
        }
    }

    // affine with f(0) = 0 means linear: columns are f(e_j)
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        let col = value(&e)?;
        a.set_column(j, &col);
    }
    LinearSystem::new(a, b).map_err(|e| anyhow::anyhow!("config field `system`: {e}"))
}

/// Export a catalog entry as a runnable config document.
pub fn export_catalog_entry(name: &str) -> Result<serde_json::Value> {
    let entry = catalog::get_entry(name)?;
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    };
    // enable the lambda-identity check only where it actually holds: the
    // entry is linear and its primary CLF already collapses lambda to 1
    let lambda_identity = entry.linear.is_some() && {
        let probe = SamplingConfig {
            samples: 200,
            ..SamplingConfig::default()
        };
        verify_lambda_identity(
            &entry.system,
            &entry.primary_clf().clf,
            &entry.weights,
            &probe,
            &HjbTolerances::default(),
        )
        .passed
    };
    let clf = if entry.primary_clf().name == "riccati" && entry.linear.is_some() {
        "riccati".to_owned()
    } else {
        entry.primary_clf().clf.expression().to_string()
    };
    Ok(serde_json::json!({
        "system": { "catalog": entry.name },
        "clf": clf,
        "weights": { "q": rows(entry.weights.q()), "r": rows(entry.weights.r()) },
        "initial_states": entry.default_initial_states,
        "simulation": {
            "method": "rk45_adaptive",
            "rtol": 1e-8,
            "atol": 1e-10,
            "t_max": 60.0,
            "stop_norm": 1e-8,
            "max_steps": 1000000
        },
        "checks": {
            "clf_check": true,
            "lambda_identity": lambda_identity,
            "hjb_residuals": true,
            "value_consistency": true
        },
        "seed": 42
    }))
}
