use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lqspde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqspde")).args(args).output().expect("binary runs")
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn riccati_on_anderson_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = lqspde(&["riccati", "--preset", "anderson", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    // header plus K + 1 nodes
    assert_eq!(csv_rows(&out.join("operator_path.csv")).len(), 1 + 201);
    assert_eq!(csv_rows(&out.join("gains.csv")).len(), 1 + 201);
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    assert!(m["results"]["iterations"].as_u64().unwrap() >= 2);
}

#[test]
fn degenerate_control_weight_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "schema_version = 1\npreset = anderson\nmodes = 4\nnoise_channels = 4\nr = -1\n").unwrap();
    let res = lqspde(&["riccati", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("strict positivity"));
}

#[test]
fn forced_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("one.txt");
    fs::write(&cfg, "schema_version = 1\npreset = anderson\nmodes = 8\nnoise_channels = 8\nintervals = 50\nmax_outer = 1\n").unwrap();
    let out = dir.path().join("out");
    let res = lqspde(&["riccati", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    let m = manifest(&out);
    assert_eq!(m["status"], "failed");
    assert_eq!(m["results"]["residual_history"].as_array().unwrap().len(), 1);
}

#[test]
fn verify_value_with_optimal_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = lqspde(&["verify-value", "--preset", "anderson", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = csv_rows(&out.join("value_identity.csv"));
    assert_eq!(rows[0][..4], ["lhs", "rhs", "gap", "ci"]);
    let get = |name: &str| -> f64 {
        let i = rows[0].iter().position(|c| c == name).unwrap();
        rows[1][i].parse().unwrap()
    };
    // optimal feedback has no deviation from itself
    assert_eq!(get("rhs"), 0.0);
    assert!(get("gap") <= 3.0 * get("ci") + get("allowance"));
}

#[test]
fn simulate_without_paths_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.json");
    fs::write(&cfg, r#"{"schema_version": 1, "preset": "scalar", "paths": 0}"#).unwrap();
    let res = lqspde(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn are_on_scalar_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = lqspde(&["are", "--preset", "scalar", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = csv_rows(&out.join("are.csv"));
    let p: f64 = rows[1][2].parse().unwrap();
    let a = 1.0 - 2.0 * std::f64::consts::PI.powi(2);
    let root = (a + (a * a + 4.0).sqrt()) / 2.0;
    assert!((p - root).abs() <= 1e-5, "{p} vs {root}");
}

#[test]
fn text_and_json_configs_give_identical_tables() {
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("c.txt");
    let json = dir.path().join("c.json");
    fs::write(&text, "schema_version = 1\npreset = anderson\nmodes = 4\nnoise_channels = 3\nintervals = 30\nq = 2\n").unwrap();
    fs::write(&json, r#"{"schema_version": 1, "preset": "anderson", "modes": 4, "noise_channels": 3, "intervals": 30, "q": 2}"#)
        .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(lqspde(&["riccati", "--config", text.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(lqspde(&["riccati", "--config", json.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.code(), Some(0));
    for name in ["operator_path.csv", "gains.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    assert_eq!(manifest(&a)["config_sha256"], manifest(&b)["config_sha256"]);
}

#[test]
fn nullctrl_sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("n.txt");
    fs::write(&cfg, "schema_version = 1\nkind = null_control\npreset = scalar\nintervals = 100\npaths = 100\npenalties = [1, 10, 100]\nprobes = 4\n").unwrap();
    let out = dir.path().join("out");
    let res = lqspde(&["nullctrl", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = csv_rows(&out.join("nullctrl.csv"));
    assert_eq!(rows[0], ["n", "probe_t", "value", "terminal_msq"]);
    assert_eq!(rows.len(), 1 + 3 * 4);
    assert!(manifest(&out)["results"]["verdict"].is_string());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(lqspde(&["riccati"]).status.code(), Some(1));
    assert_eq!(lqspde(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lqspde(&["--help"]).status.code(), Some(0));
}
