use std::path::Path;
use std::process::{Command, Output};

fn arrivallab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arrivallab")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn unknown_key_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = format!(
        r#"{{"initial_curve": {{"type": "circle", "radius": 1.0}},
            "speed": {{"name": "curvature", "alpha_": 1.0}},
            "grids": {{"theta_count": 64, "grid_nx": 64}},
            "output_dir": {:?}}}"#,
        out.to_string_lossy()
    );
    let path = write_config(tmp.path(), &cfg);
    let o = arrivallab(&["verify", "--config", &path]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn min_curvature_classification_exits_1_with_witness() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = format!(
        r#"{{"initial_curve": {{"type": "circle"}},
            "speed": {{"name": "min_curvature", "alpha": 1.0, "dimension": 2}},
            "grids": {{"theta_count": 64}},
            "checks": ["inverse_concavity"],
            "seed": 7,
            "output_dir": {:?}}}"#,
        out.to_string_lossy()
    );
    let path = write_config(tmp.path(), &cfg);
    let o = arrivallab(&["verify", "--config", &path]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    let w = &report["checks"][0]["details"]["witness"];
    assert!(w["midpoint_violation"].as_f64().unwrap() > 1e-6, "{w}");

    // the report subcommand reproduces the exit code
    let o = arrivallab(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn classify_speed_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("h");
    let o = arrivallab(&[
        "classify-speed", "--speed", "mean", "--dimension", "3", "--segments", "2000", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn circle_preset_passes_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("circle");
    let o = arrivallab(&["--jobs", "2", "verify", "--preset", "circle_mcf", "--seed", "3", "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "curves.svg", "q_trace.svg", "harnack_q.csv", "field.csv", "field.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "PASS");
    assert_eq!(report["checks"].as_array().unwrap().len(), 11);
}

#[test]
fn single_level_convergence_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = arrivallab(&["converge", "--preset", "circle_mcf", "--levels", "1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
