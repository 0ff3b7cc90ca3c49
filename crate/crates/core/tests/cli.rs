use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn magframe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magframe")).args(args).output().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run_file(file: &Path, out: &Path) -> Output {
    magframe(&["run", file.to_str().unwrap(), "--workers", "1", "--out", out.to_str().unwrap()])
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn gate<'a>(r: &'a Value, name: &str) -> &'a Value {
    r["gates"].as_array().unwrap().iter().find(|g| g["name"] == name).unwrap()
}

#[test]
fn list_experiments_is_stable() {
    let a = magframe(&["list-experiments"]);
    assert_eq!(a.status.code(), Some(0));
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("beals-check"));
    assert!(text.contains("cv-bound"));
    let names: Vec<&str> = text.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names.len(), 9);
    assert_eq!(names[0], "frame-test");
    assert_eq!(magframe(&["list-experiments"]).stdout, text.as_bytes());
}

#[test]
fn malformed_field_kind_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.toml");
    std::fs::write(
        &file,
        "experiment = \"stokes-test\"\ndimension = 2\n[field]\nkind = \"lumpy\"\n[radii]\nr_pos = 0\nr_mom = 0\n",
    )
    .unwrap();
    let o = run_file(&file, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("field.kind"), "{err}");
    assert!(!dir.path().join("out/report.json").exists());
}

#[test]
fn unreadable_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_file(&dir.path().join("missing.toml"), dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn frame_test_passes_on_the_gaussian() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_file(&scenario("frame_d1.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["passed"], true);
    assert!(gate(&r, "parseval_defect")["value"].as_f64().unwrap() < 1e-3);
    for g in r["gates"].as_array().unwrap() {
        assert!(!g["invariant"].as_str().unwrap().is_empty());
    }
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["experiment"], "frame-test");
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn decay_report_on_identity_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_file(&scenario("decay_identity.toml"), dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = report(dir.path());
    assert_eq!(r["results"]["decay"]["stable"], true);
    let csv = std::fs::read_to_string(dir.path().join("decay.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "n1,n2,C,stable");
    assert_eq!(csv.lines().count(), 1 + 9);
    assert!(dir.path().join("matrices/1.csv").exists());
}

#[test]
fn failed_gate_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("coarse.toml");
    // Far too few momenta for the round trip to reach 5e-2.
    std::fs::write(
        &file,
        "experiment = \"roundtrip-symbol\"\ndimension = 1\n[[symbols]]\nkind = \"cos_xi\"\n[radii]\nr_pos = 3\nr_mom = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run_file(&file, &out);
    assert_eq!(o.status.code(), Some(1));
    let r = report(&out);
    assert_eq!(r["passed"], false);
    assert_eq!(gate(&r, "roundtrip_error")["passed"], false);
}

#[test]
fn worker_count_does_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for w in ["1", "3"] {
        let out = dir.path().join(w);
        let o = magframe(&[
            "run",
            scenario("cv_d1.toml").to_str().unwrap(),
            "--workers",
            w,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0));
        bytes.push(std::fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}
