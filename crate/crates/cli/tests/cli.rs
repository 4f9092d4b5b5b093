use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gcf_cli::config::{CorruptionSpec, ShapeSpec};
use gcf_cli::{parse_config, ConfigError};
use gcf_core::CheckId;
use serde_json::Value;

const MINIMAL: &str = r#"{ "grid": { "n": 1, "resolution": [64] }, "alpha": 1.0, "t_end": 0.1 }"#;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

fn gcf(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gcf"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("GCF_THREADS", t);
    }
    cmd.output().expect("gcf runs")
}

fn violations(text: &str) -> Vec<String> {
    match parse_config(text, Path::new(".")) {
        Err(ConfigError::Validation(v)) => v,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn minimal_config_gets_defaults() {
    let cfg = parse_config(MINIMAL, Path::new(".")).unwrap();
    assert_eq!(cfg.initial, ShapeSpec::Constant(1.0));
    assert!(cfg.obstacle.is_none());
    assert!((cfg.cadence() - 0.001).abs() < 1e-15);
    assert_eq!(cfg.check_ids(), vec![CheckId::UNonincreasing, CheckId::EulerFormula, CheckId::EvolutionResidual]);
    assert_eq!(cfg.output_dir(Path::new("dir/case.json")), PathBuf::from("gcf-out/case"));
}

#[test]
fn invalid_values_are_all_reported() {
    let v = violations(r#"{ "grid": { "n": 1, "resolution": [64] }, "alpha": 0.0, "t_end": -1.0 }"#);
    assert_eq!(v.len(), 2, "{v:?}");
    assert!(v[0].contains("alpha"));
    assert!(v[1].contains("t_end"));
}

#[test]
fn increasing_schedule_is_rejected() {
    let v = violations(
        r#"{ "grid": { "n": 1, "resolution": [64] }, "alpha": 1.0, "t_end": 1.0,
             "obstacle": { "homothetic": { "initial": { "constant": 0.5 }, "a_inf": 0.5, "rate": 1.0 } },
             "delta_schedule": [0.1, 0.2] }"#,
    );
    assert!(v.iter().any(|m| m.contains("strictly decreasing")), "{v:?}");
}

#[test]
fn checks_needing_an_obstacle_are_rejected_without_one() {
    let v = violations(
        r#"{ "grid": { "n": 1, "resolution": [64] }, "alpha": 1.0, "t_end": 1.0, "checks": ["gap_positive"] }"#,
    );
    assert!(v[0].contains("needs an obstacle"), "{v:?}");
}

#[test]
fn parse_errors_carry_a_position() {
    let err = parse_config("{\n  \"grid\": { \"n\": 1,, }\n}", Path::new(".")).unwrap_err();
    match err {
        ConfigError::Parse { line, column, .. } => {
            assert_eq!(line, 2);
            assert!(column > 0);
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse_config(
            r#"{ "grid": { "n": 1, "resolution": [64] }, "alpha": 1.0, "t_end": 1.0, "speed": 2 }"#,
            Path::new(".")
        ),
        Err(ConfigError::Parse { .. })
    ));
}

#[test]
fn corruption_specs_are_tagged() {
    let cfg = parse_config(
        r#"{ "grid": { "n": 1, "resolution": [64] }, "alpha": 1.0, "t_end": 1.0, "corrupt": { "kind": "reverse_time" } }"#,
        Path::new("."),
    )
    .unwrap();
    assert_eq!(cfg.corrupt, Some(CorruptionSpec::ReverseTime));
}

#[test]
fn missing_table_file_is_a_violation() {
    let v = violations(
        r#"{ "grid": { "n": 1, "resolution": [64] }, "initial": { "table": "nowhere.txt" }, "alpha": 1.0, "t_end": 1.0 }"#,
    );
    assert!(v[0].contains("nowhere.txt"));
}

#[test]
fn bad_config_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{ "grid": { "n": 3, "resolution": [8] }, "alpha": -1, "t_end": 1 }"#).unwrap();
    let out = gcf(&["run", path.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["kind"], "config");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("grid.n") && msg.contains("alpha"), "{msg}");
}

#[test]
fn missing_config_exits_4() {
    let out = gcf(&["run", "/nonexistent/config.json"], None);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn invalid_thread_count_exits_4() {
    let out = gcf(&["run", fixture("sphere_circle").to_str().unwrap()], Some("zero"));
    assert_eq!(out.status.code(), Some(4));
    let out = gcf(&["run", fixture("sphere_circle").to_str().unwrap()], Some("0"));
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn run_writes_artifacts_and_honours_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    let a = gcf(&["run", fixture("sphere_circle").to_str().unwrap(), "--out", one.to_str().unwrap()], Some("1"));
    let b = gcf(&["run", fixture("sphere_circle").to_str().unwrap(), "--out", two.to_str().unwrap()], Some("2"));
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(b.status.code(), Some(0));
    for f in ["report.json", "summary.json", "trajectory.csv"] {
        assert_eq!(std::fs::read(one.join(f)).unwrap(), std::fs::read(two.join(f)).unwrap(), "{f}");
    }
    let reports: Vec<Value> = serde_json::from_slice(&std::fs::read(one.join("report.json")).unwrap()).unwrap();
    assert!(reports.iter().all(|r| r["pass"] == true));
    assert!(!one.join("failure.json").exists());
}

#[test]
fn corrupted_run_exits_2_with_failing_ids() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcf(&["run", fixture("corrupt_reverse").to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let failure: Value = serde_json::from_slice(&std::fs::read(dir.path().join("failure.json")).unwrap()).unwrap();
    assert_eq!(failure["exit_code"], 2);
    assert!(failure["failing"].as_array().unwrap().iter().any(|f| f == "u_nonincreasing"));
}

#[test]
fn validate_obstacle_passes_on_the_contact_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        gcf(&["validate-obstacle", fixture("contact").to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    let rep: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("obstacle_validation.json")).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);
}

#[test]
fn validate_obstacle_flags_an_enclosing_obstacle() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enclosing.json");
    std::fs::write(
        &path,
        r#"{ "grid": { "n": 1, "resolution": [64] }, "alpha": 1.0, "t_end": 1.0,
             "obstacle": { "homothetic": { "initial": { "constant": 1.2 }, "a_inf": 0.5, "rate": 1.0 } } }"#,
    )
    .unwrap();
    let out =
        gcf(&["validate-obstacle", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn probe_without_a_probe_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcf(&["probe", fixture("contact").to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn probe_reports_the_free_boundary_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = gcf(&["probe", fixture("radial_contact").to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Vec<Value> = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let ids: Vec<&str> = reports.iter().map(|r| r["id"].as_str().unwrap()).collect();
    for id in ["coincidence_growth", "nondegeneracy", "boundary_speed_decay", "lipschitz_zoom"] {
        assert!(ids.contains(&id), "{ids:?}");
    }
    assert!(dir.path().join("free_boundary.json").is_file());
    assert!(dir.path().join("patch.csv").is_file());
}
