use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_densteer"));
    cmd.env_remove("DENSTEER_THREADS");
    cmd
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_STEER: &str = r#"{
  "scenario": "steer",
  "system": {"preset": "double_integrator"},
  "horizon": 1.0,
  "diffeo": {"kind": "from_hat", "map": {"kind": "tanh_shift", "alpha": 0.5}},
  "ensemble_size": 16,
  "step": 0.02,
  "seed": 5,
  "probe": {"pairs": 50, "times": 5}
}"#;

fn without_wall_clock(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_seconds");
    v
}

#[test]
fn shipped_configs_validate() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let out = bin().arg("validate").arg(&path).output().unwrap();
            assert!(out.status.success(), "{}: {}", path.display(), stderr(&out));
            seen += 1;
        }
    }
    assert_eq!(seen, 5);
}

#[test]
fn validate_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"scenario": "steer", "horizon": 1.0, "diffeo": {"kind": "identity"},
            "system": {"a": [[0, 1], [0, 0]], "b": [[0], [1], [1]]}}"#,
    );
    let out = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("system.b: expected 2 rows"), "{}", stderr(&out));
}

#[test]
fn run_writes_report_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "steer.json", SMALL_STEER);
    let out_dir = dir.path().join("out");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["seed"], 5);
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));
    assert!(report["endpoint"]["max"].as_f64().unwrap() <= 1e-3);
    let csv = fs::read_to_string(out_dir.join("trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,particle_id,x_0,x_1,u_0"));
    // 50 steps at stride 10 record 6 nodes of 16 particles
    assert_eq!(lines.count(), 6 * 16);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "steer.json", SMALL_STEER);
    let a = dir.path().join("a");
    let out = bin().args(["run", cfg.to_str().unwrap(), "--seed", "99", "--out", a.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 99);
    assert_eq!(report["config"]["seed"], 99);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "steer.json", SMALL_STEER);
    let one = dir.path().join("one");
    let eight = dir.path().join("eight");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&one).args(["--threads", "1"]).output().unwrap();
    assert!(out.status.success());
    let out = bin()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&eight)
        .env("DENSTEER_THREADS", "8")
        .output()
        .unwrap();
    assert!(out.status.success());
    let r1 = fs::read_to_string(one.join("report.json")).unwrap();
    let r8 = fs::read_to_string(eight.join("report.json")).unwrap();
    assert_eq!(without_wall_clock(&r1), without_wall_clock(&r8));
    assert_eq!(
        fs::read(one.join("trajectories.csv")).unwrap(),
        fs::read(eight.join("trajectories.csv")).unwrap()
    );
}

#[test]
fn failed_hard_check_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    // a tolerance no integrator can meet
    let body = SMALL_STEER.replace("\"seed\": 5,", "\"seed\": 5, \"endpoint_tolerance\": 1e-300,");
    let cfg = write_config(dir.path(), "steer.json", &body);
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL endpoint_max_error"));
}

#[test]
fn soft_warning_keeps_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    // a 100° rotation is not monotone, yet (1-s)I + sR never degenerates
    // because R has no negative real eigenvalue, so steering still succeeds
    let body = SMALL_STEER
        .replace(r#"{"preset": "double_integrator"}"#, r#"{"preset": "integrator", "dim": 2}"#)
        .replace(
            r#"{"kind": "from_hat", "map": {"kind": "tanh_shift", "alpha": 0.5}}"#,
            r#"{"kind": "linear", "matrix": [[-0.17364817766693033, -0.984807753012208], [0.984807753012208, -0.17364817766693033]]}"#,
        );
    let cfg = write_config(dir.path(), "steer.json", &body);
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(stdout(&out).contains("warn"), "{}", stdout(&out));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
}

#[test]
fn runtime_error_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"scenario": "steer", "horizon": 1.0, "diffeo": {"kind": "identity"},
            "system": {"a": [[0, 0], [0, 0]], "b": [[1], [0]]}}"#,
    );
    let out_dir = dir.path().join("o");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("not controllable"), "{}", stderr(&out));
    assert!(!out_dir.join("report.json").exists());
    assert!(!out_dir.join("trajectories.csv").exists());
}

#[test]
fn bounds_prints_sphere_values() {
    let out = bin().args(["bounds", "--manifold", "sphere", "--r", "0.1"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["n_low"].as_f64().unwrap() - 3.125).abs() < 1e-12);
    assert!((v["n_high"].as_f64().unwrap() - 1973.9).abs() < 0.1);
    assert!((v["k_low"].as_f64().unwrap() - 6.25).abs() < 1e-12);
}

#[test]
fn bounds_rejects_radius_at_reach() {
    let out = bin().args(["bounds", "--manifold", "S1", "--r", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("reach"));
    let out = bin().args(["bounds", "--manifold", "klein", "--r", "0.1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn complexity_run_has_no_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"scenario": "complexity", "complexity": {"manifold": "sphere", "r": 0.1}}"#,
    );
    let out_dir = dir.path().join("o");
    let out = bin().arg("run").arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["complexity"]["k_estimate"], 8.0);
    assert!(!out_dir.join("trajectories.csv").exists());
}
