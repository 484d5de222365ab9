//! End-to-end CLI behavior: exit codes, file formats, error messages.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn clfkit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clfkit"))
}

fn write_config(dir: &Path, name: &str, config: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn base_config() -> serde_json::Value {
    serde_json::json!({
        "system": { "catalog": "integrator1d" },
        "clf": "0.5*x1^2",
        "weights": { "q": [[1.0]], "r": [[1.0]] },
        "initial_states": [[1.0]],
        "simulation": { "method": "rk45_adaptive", "t_max": 40.0 },
        "checks": { "clf_check": true, "lambda_identity": true,
                    "hjb_residuals": true, "value_consistency": true },
        "seed": 42
    })
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn catalog_list_names_all_entries() {
    let output = clfkit().args(["catalog", "list"]).output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    for name in ["cubic1d", "damped1d", "double_integrator", "integrator1d"] {
        assert!(stdout.contains(name), "missing {name} in:\n{stdout}");
    }
}

#[test]
fn catalog_export_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["integrator1d", "double_integrator"] {
        let output = clfkit().args(["catalog", "export", name]).output().unwrap();
        assert_eq!(output.status.code(), Some(0));
        let path = dir.path().join(format!("{name}.json"));
        std::fs::write(&path, &output.stdout).unwrap();

        let validate = clfkit().arg("validate").arg(&path).output().unwrap();
        assert_eq!(validate.status.code(), Some(0), "{}", stderr(&validate));

        let out_dir = dir.path().join(format!("{name}_out"));
        let run = clfkit()
            .arg("run")
            .arg(&path)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(run.status.code(), Some(0), "{name}: {}", stderr(&run));
        assert!(out_dir.join("summary.json").exists());
        assert!(out_dir.join("traj_0.csv").exists());
    }
}

#[test]
fn catalog_export_unknown_name_exits_one() {
    let output = clfkit()
        .args(["catalog", "export", "nonexistent"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("nonexistent"));
}

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "good.json", &base_config());
    let output = clfkit().arg("validate").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
}

#[test]
fn validate_reports_missing_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config();
    config["weights"] = serde_json::json!({ "q": [[1.0]] });
    let path = write_config(dir.path(), "missing_r.json", &config);
    let output = clfkit().arg("validate").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = stderr(&output);
    assert!(err.contains("weights") && err.contains('r'), "{err}");
}

#[test]
fn validate_rejects_out_of_dimension_clf() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config();
    config["system"] = serde_json::json!({ "catalog": "double_integrator" });
    config["clf"] = serde_json::json!("0.5*x3^2");
    config["weights"] = serde_json::json!({ "q": [[1.0, 0.0], [0.0, 1.0]], "r": [[1.0]] });
    config["initial_states"] = serde_json::json!([[1.0, 0.0]]);
    let path = write_config(dir.path(), "x3.json", &config);
    let output = clfkit().arg("validate").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("x3"), "{}", stderr(&output));
}

#[test]
fn run_rejects_indefinite_q_naming_the_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config();
    config["system"] = serde_json::json!({ "catalog": "double_integrator" });
    config["clf"] = serde_json::json!("riccati");
    config["weights"] = serde_json::json!({ "q": [[1.0, 2.0], [2.0, 1.0]], "r": [[1.0]] });
    config["initial_states"] = serde_json::json!([[1.0, 0.0]]);
    let path = write_config(dir.path(), "indefinite.json", &config);
    let output = clfkit()
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = stderr(&output);
    assert!(
        err.contains("Q") && err.contains("positive definite"),
        "{err}"
    );
}

#[test]
fn run_exits_two_when_a_check_fails() {
    // the steep CLF x^2 on damped1d does not collapse lambda to 1, so the
    // lambda_identity check must fail while the run itself succeeds
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config();
    config["system"] = serde_json::json!({ "catalog": "damped1d" });
    let path = write_config(dir.path(), "damped.json", &config);
    let out_dir = dir.path().join("out");
    let output = clfkit()
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "{}", stderr(&output));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["all_passed"], false);
    assert_eq!(summary["checks"]["lambda_identity"]["passed"], false);
    // the trajectory itself still converged
    assert_eq!(summary["trajectories"][0]["converged"], true);
}

#[test]
fn run_accepts_inline_system_definitions() {
    let dir = tempfile::tempdir().unwrap();
    let config = serde_json::json!({
        "system": { "n": 1, "m": 1, "f": ["x1^3"], "g": [["1"]] },
        "clf": "0.5*x1^2",
        "weights": { "q": [[1.0]], "r": [[1.0]] },
        "initial_states": [[1.0], [-0.5]],
        "simulation": { "method": "rk45_adaptive", "t_max": 60.0 },
        "checks": { "clf_check": true, "value_consistency": true },
        "seed": 3
    });
    let path = write_config(dir.path(), "inline.json", &config);
    let out_dir = dir.path().join("out");
    let output = clfkit()
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    assert!(out_dir.join("traj_0.csv").exists());
    assert!(out_dir.join("traj_1.csv").exists());

    let csv = std::fs::read_to_string(out_dir.join("traj_0.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "t,x1,u1,V,lambda,integrand_j4,integrand_j5,j4_running,j5_running"
    );
    // 17 significant digits per number
    let first_row = csv.lines().nth(1).unwrap();
    assert!(first_row.split(',').all(|v| v.contains('e')));
}

#[test]
fn run_reports_unknown_catalog_entry() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config();
    config["system"] = serde_json::json!({ "catalog": "missing_entry" });
    let path = write_config(dir.path(), "unknown.json", &config);
    let output = clfkit().arg("validate").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("missing_entry"));
}

#[test]
fn rejected_unknown_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config();
    config["extra_field"] = serde_json::json!(1);
    let path = write_config(dir.path(), "extra.json", &config);
    let output = clfkit().arg("validate").arg(&path).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("extra_field"), "{}", stderr(&output));
}

fn assert_all_numbers_finite(value: &serde_json::Value, path: &str) {
    match value {
        serde_json::Value::Number(n) => {
            // serde_json encodes non-finite floats as null, so any number
            // present is finite; still assert for clarity
            assert!(n.as_f64().is_some_and(f64::is_finite), "{path} = {n}");
        }
        serde_json::Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                assert_all_numbers_finite(item, &format!("{path}[{i}]"));
            }
        }
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                assert_all_numbers_finite(v, &format!("{path}.{k}"));
            }
        }
        serde_json::Value::Null => panic!("{path} is null (a non-finite number?)"),
        _ => {}
    }
}

#[test]
fn summary_contains_only_finite_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "finite.json", &base_config());
    let out_dir = dir.path().join("out");
    let output = clfkit()
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_all_numbers_finite(&summary, "summary");
}

#[test]
fn summary_lambda_statistics_match_the_constant_distortion() {
    // damped1d has lambda = sqrt(2) - 1 everywhere; check the stats block
    let dir = tempfile::tempdir().unwrap();
    let mut config = base_config();
    config["system"] = serde_json::json!({ "catalog": "damped1d" });
    config["checks"] = serde_json::json!({ "value_consistency": true });
    let path = write_config(dir.path(), "damped_stats.json", &config);
    let out_dir = dir.path().join("out");
    let output = clfkit()
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    let lambda = &summary["trajectories"][0]["lambda"];
    let expected = 2f64.sqrt() - 1.0;
    for key in ["min", "max", "mean"] {
        let v = lambda[key].as_f64().unwrap();
        assert!(
            (v - expected).abs() < 1e-9,
            "lambda.{key} = {v}, expected {expected}"
        );
    }
}
