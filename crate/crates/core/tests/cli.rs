use std::fs;
use std::process::Command;

fn msmd() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_msmd"));
    c.env_remove("MC_SEED_OVERRIDE");
    c
}

#[test]
fn fig2_single_estimator_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let status = msmd()
        .args(["run", "--scenario", "localization-fig2", "--estimator", "marginal", "--rounds", "40", "--seed", "7"])
        .arg("--out")
        .arg(dir.path())
        .arg("--emit-plot")
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(dir.path().join("localization-fig2_marginal_seed7.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("round,agent,error,consensus_tv,kl_ref"));
    assert_eq!(lines.count(), 40 * 8);
    assert!(dir.path().join("localization-fig2.svg").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["runs"].as_array().unwrap().len(), 1);
}

#[test]
fn seed_override_env_wins() {
    let dir = tempfile::tempdir().unwrap();
    let status = msmd()
        .env("MC_SEED_OVERRIDE", "42")
        .args(["run", "--scenario", "mapping-desk", "--rounds", "5", "--seed", "3"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("mapping-desk_marginal_seed42.csv").exists());
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = msmd().args(["config", "--scenario", "mapping-desk", "--rounds", "3"]).output().unwrap();
    assert!(out.status.success());
    let path = dir.path().join("c.json");
    fs::write(&path, &out.stdout).unwrap();
    let status = msmd().arg("run").arg("--config").arg(&path).arg("--out").arg(dir.path().join("o")).status().unwrap();
    assert!(status.success());
    assert!(dir.path().join("o").join("summary.csv").exists());
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(
        &path,
        r#"{"schema_version":1,"scenario":{"kind":"localization","topology":{"kind":"ring"},"b":-1},"estimator":{"kind":"marginal"},"run":{"rounds":3}}"#,
    )
    .unwrap();
    let out = msmd().arg("run").arg("--config").arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scenario.b"), "{err}");
}

#[test]
fn unknown_preset_fails() {
    let out = msmd().args(["run", "--scenario", "nope"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn verify_reports_json() {
    let out = msmd().args(["verify", "pinsker", "rate-bound"]).output().unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let suites = report.as_array().unwrap();
    assert_eq!(suites.len(), 2);
    for s in suites {
        assert_eq!(s["passed"], true);
        for c in s["checks"].as_array().unwrap() {
            assert!(c["instances"].as_u64().unwrap() > 0);
            assert!(c["max_violation"].is_number());
        }
    }
}

#[test]
fn verify_exits_nonzero_on_violation() {
    let out = msmd().args(["verify", "contraction"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
