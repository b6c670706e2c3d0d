use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use spinvl_cli::{run, RunStatus, ScenarioConfig};

fn spinvl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinvl")).args(args).env_remove("SPINVL_OUT").output().unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn closed_s3() -> Value {
    json!({
        "version": 1,
        "mode": "simulate",
        "chain": {"kind": "homogeneous", "sites": 3, "hopping": -0.25},
        "grid": {"t_end": 5.0, "step": 0.05}
    })
}

#[test]
fn simulate_writes_closed_form_magnetization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg: ScenarioConfig = serde_json::from_value(closed_s3()).unwrap();
    let m = run(&cfg, tmp.path()).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    assert_eq!(m.nodes, 101);
    assert!(m.residuals.as_ref().unwrap().continuity_ok);

    let mut reader = csv::Reader::from_path(tmp.path().join("trajectory.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["t", "x", "m3", "j", "T", "h"]);
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        let t: f64 = rec[0].parse().unwrap();
        let x: usize = rec[1].parse().unwrap();
        let m3: f64 = rec[2].parse().unwrap();
        let w = 2f64.sqrt() * t;
        let want = if x == 2 { -w.cos() / 3.0 } else { -0.5 + w.cos() / 6.0 };
        assert!((m3 - want).abs() < 1e-7, "t = {t}, x = {x}: {m3} vs {want}");
        assert_eq!(rec[4].is_empty(), x == 3);
        rows += 1;
    }
    assert_eq!(rows, 3 * 101);
}

#[test]
fn csv_output_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = closed_s3();
    v["dephasing"] = json!({"eta": 0.05});
    v["field"] = json!([{"site": 2, "amplitude": 0.3, "frequency": 1.0}]);
    let cfg: ScenarioConfig = serde_json::from_value(v).unwrap();
    run(&cfg, &tmp.path().join("a")).unwrap();
    run(&cfg, &tmp.path().join("b")).unwrap();
    for file in ["trajectory.csv", "residuals.csv"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn fig5_preset_reports_expected_breakdown() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spinvl(&["preset", "--preset", "fig5", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&tmp.path().join("fig5"));
    assert_eq!(m["status"], "breakdown");
    let t = m["breakdown"]["t"].as_f64().unwrap();
    assert!((t - 3.55).abs() <= 0.05, "breakdown at {t}");
    assert!(m["bath"]["interior_deviation"].as_f64().unwrap() < 1e-5);
    assert!(m["residuals"]["continuity_ok"].as_bool().unwrap());
}

#[test]
fn unexpected_breakdown_exits_with_four() {
    let tmp = tempfile::tempdir().unwrap();
    let v = json!({
        "version": 1,
        "mode": "invert_closed",
        "chain": {"kind": "homogeneous", "sites": 6, "hopping": -0.25},
        "target_chain": {"kind": "engineered", "sites": 6},
        "grid": {"t_end": 3.0, "step": 0.01}
    });
    let cfg = write_config(tmp.path(), "fig2short.json", &v);
    let out = spinvl(&["invert", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let m = manifest(&tmp.path().join("fig2short"));
    assert_eq!(m["status"], "breakdown");
    assert_eq!(m["breakdown"]["bond"], 1);
}

#[test]
fn integrator_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = closed_s3();
    v["field"] = json!([{"site": 1, "amplitude": 1e308}, {"site": 2, "amplitude": 1e308}]);
    let cfg = write_config(tmp.path(), "blowup.json", &v);
    let out = spinvl(&["simulate", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(manifest(&tmp.path().join("blowup"))["status"], "failed");
}

#[test]
fn config_errors_exit_with_two_and_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().to_str().unwrap();

    let mut v = closed_s3();
    v["mode"] = json!("compensate_bath");
    let cfg = write_config(tmp.path(), "nobath.json", &v);
    let out = spinvl(&["compensate", "--config", &cfg, "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bath.epsilon"));

    let mut v = closed_s3();
    v["grid"]["stride"] = json!(2);
    let cfg = write_config(tmp.path(), "typo.json", &v);
    let out = spinvl(&["simulate", "--config", &cfg, "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stride"));

    let cfg = write_config(tmp.path(), "closed.json", &closed_s3());
    let out = spinvl(&["invert", "--config", &cfg, "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`mode`"));

    let out = spinvl(&["preset", "--preset", "fig9", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));

    let out = spinvl(&["preset", "--preset", "fig5", "--sector", "--alpha", "-1", "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`reg`"));
    assert!(!tmp.path().join("fig5").exists());
}

#[test]
fn identities_subcommand_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = spinvl(&["identities", "--trials", "4", "--max-sites", "4", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(&tmp.path().join("identities"));
    assert_eq!(m["identities"].as_array().unwrap().len(), 8);
    assert!(tmp.path().join("identities/identities.csv").exists());
}

#[test]
fn jobs_use_isolated_directories_and_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.json", &closed_s3());
    let mut v = closed_s3();
    v["backend"] = json!("sector");
    let b = write_config(tmp.path(), "b.json", &v);
    let root = tmp.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_spinvl"))
        .args(["simulate", "--config", &a, "--config", &b, "--jobs", "2", "--step", "0.1"])
        .env("SPINVL_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["a", "b"] {
        let m = manifest(&root.join(name));
        assert_eq!(m["status"], "completed");
        assert_eq!(m["nodes"], 51);
        assert_eq!(m["config"]["grid"]["step"], 0.1);
    }
}
