use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_arz-tse");

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/highway.json")
}

fn default_json() -> Value {
    serde_json::from_str(&std::fs::read_to_string(default_config()).unwrap()).unwrap()
}

fn write_config(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

/// Default scenario cut down to `duration_s` with a single seed.
fn short_json(duration_s: u64) -> Value {
    let mut v = default_json();
    v["duration_s"] = json!(duration_s);
    v["jam"] = json!({ "segment": 7, "start_s": 5, "end_s": 15, "scale": 0.3 });
    v["noise"]["seeds"] = json!([1]);
    v
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_full_trajectory() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("truth.csv");
    let json_out = dir.path().join("truth.json");
    let o = run(&["simulate", "--config", s(&default_config()), "--out", s(&out), "--json", s(&json_out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["step", "segment_id", "rho", "psi", "speed"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 500 * 12);
    assert_eq!(&rows[0][0], "1");
    assert_eq!(&rows[5999][0], "500");
    assert_eq!(&rows[5999][1], "12");
    for r in &rows {
        for c in 2..5 {
            let v: f64 = r[c].parse().unwrap();
            assert!(v.is_finite());
        }
    }
    let dump: Value = serde_json::from_str(&std::fs::read_to_string(json_out).unwrap()).unwrap();
    assert_eq!(dump["steps"].as_array().unwrap().len(), 500);
    assert_eq!(dump["segments"], 12);
}

#[test]
fn malformed_json_exits_2_without_output() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"params\": {\n    \"v_f\": 102.0,,\n").unwrap();
    let out = dir.path().join("truth.csv");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert!(!out.exists());
}

#[test]
fn cfl_violation_is_rejected_before_running() {
    let dir = TempDir::new().unwrap();
    let mut v = default_json();
    v["params"]["T_s"] = json!(5.0);
    v["duration_s"] = json!(500);
    let cfg = write_config(&dir, "cfl.json", &v);
    let out = dir.path().join("truth.csv");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("cfl"));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let mut v = default_json();
    v["params"]["v_max"] = json!(120.0);
    let cfg = write_config(&dir, "extra.json", &v);
    let o = run(&["gramian", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("v_max"));
}

#[test]
fn missing_config_is_a_config_error() {
    let o = run(&["gramian", "--config", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_writes_csv_and_summary() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "short.json", &short_json(40));
    let out = dir.path().join("mhe.csv");
    let o = run(&["estimate", "--config", s(&cfg), "--estimator", "mhe", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv::Reader::from_path(&out).unwrap().records().count(), 40 * 12);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mhe.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["estimator"], "mhe");
    for key in ["rmse_rho", "rmse_v", "mean_step_time_s"] {
        assert!(summary[key].as_f64().unwrap() >= 0.0, "{key}");
    }
}

#[test]
fn estimate_is_reproducible_with_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "short.json", &short_json(30));
    let mut outputs = Vec::new();
    for (name, seed) in [("a.csv", "7"), ("b.csv", "7"), ("c.csv", "8")] {
        let out = dir.path().join(name);
        let o = run(&["estimate", "--config", s(&cfg), "--estimator", "ekf", "--seed", seed, "--out", s(&out), "--no-timing"]);
        assert!(o.status.success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_ne!(outputs[0], outputs[2]);
    assert_eq!(
        std::fs::read(dir.path().join("a.summary.json")).unwrap(),
        std::fs::read(dir.path().join("b.summary.json")).unwrap()
    );
}

#[test]
fn smoothing_is_reported_and_applied() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "short.json", &short_json(30));
    let plain = dir.path().join("plain.csv");
    let smooth = dir.path().join("smooth.csv");
    assert!(run(&["estimate", "--config", s(&cfg), "--estimator", "ekf", "--out", s(&plain)]).status.success());
    assert!(run(&["estimate", "--config", s(&cfg), "--estimator", "ekf", "--smooth", "15", "--out", s(&smooth)]).status.success());
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("smooth.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["smooth_window"], 15);

    let rho = |p: &Path| -> Vec<f64> {
        csv::Reader::from_path(p).unwrap().records().map(|r| r.unwrap()[2].parse().unwrap()).collect()
    };
    let (a, b) = (rho(&plain), rho(&smooth));
    // segment 1 at step 20: mean of steps 6..=20
    let mean: f64 = (6..=20).map(|k| a[(k - 1) * 12]).sum::<f64>() / 15.0;
    assert!((b[19 * 12] - mean).abs() <= 1e-7 * mean.abs().max(1.0));
    assert_eq!(a[0], b[0]);

    let o = run(&["estimate", "--config", s(&cfg), "--smooth", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_estimator_lists_valid_names() {
    let o = run(&["estimate", "--config", s(&default_config()), "--estimator", "pf"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["ekf", "ukf", "enkf", "mhe"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn sweep_kinds_and_row_counts() {
    let dir = TempDir::new().unwrap();
    let mut v = short_json(20);
    v["estimators"] = json!([{ "kind": "ekf" }, { "kind": "mhe" }]);
    v["sweeps"] = json!({
        "sensor_counts": [0, 1, 2],
        "periods_s": [null, 1],
        "rotation_start": [1, 4],
        "spacing_starts": [[1, 2], [1, 5]],
        "noise_stds": [0.0, 1.0, 10.0]
    });
    let cfg = write_config(&dir, "sweep.json", &v);
    for (kind, rows) in [("sensors", 3 * 2), ("rotation", 2 * 2), ("spacing", 2 * 2), ("noise", 3 * 2)] {
        let out = dir.path().join(format!("{kind}.csv"));
        let o = run(&["sweep", "--config", s(&cfg), "--sweep", kind, "--out", s(&out), "--jobs", "2"]);
        assert!(o.status.success(), "{kind}: {}", String::from_utf8_lossy(&o.stderr));
        let mut rd = csv::Reader::from_path(&out).unwrap();
        assert_eq!(&rd.headers().unwrap()[0], "scenario");
        let recs: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), rows, "{kind}");
        assert!(recs.iter().all(|r| &r[0] == "highway"));
    }
    let o = run(&["sweep", "--config", s(&cfg), "--sweep", "weather"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gramian_verdicts() {
    let o = run(&["gramian", "--config", s(&default_config())]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("threshold: 1e-9"), "{text}");
    assert!(text.contains("verdict: observable"), "{text}");

    let dir = TempDir::new().unwrap();
    let mut v = default_json();
    v["sensors"] = json!({ "fixed": [] });
    let cfg = write_config(&dir, "blind.json", &v);
    let o = run(&["gramian", "--config", s(&cfg)]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("fixed sensors: (none)"));
    assert!(text.contains("verdict: not observable"), "{text}");
}

#[test]
fn mobile_schedule_must_fit() {
    let dir = TempDir::new().unwrap();
    let mut v = short_json(10);
    v["sensors"] = json!({ "fixed": [9, 10, 11, 12], "mobile": { "count": 2, "period_s": 1, "start": [1, 9] } });
    let cfg = write_config(&dir, "mobile.json", &v);
    let o = run(&["simulate", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}
