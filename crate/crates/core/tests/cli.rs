use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn entrobound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entrobound"))
        .args(args)
        .env("ENTROBOUND_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const GAUSSIAN: &str = r#"{
  "model": {"type": "clipped_gaussian", "horizon": 2,
            "cov": [[0.5625, 0.0], [0.0, 0.5625]],
            "mean0": [0.5, 0.5], "cov0": [[0.25, 0.0], [0.0, 0.25]]},
  "partition": {"counts": [3, 3]},
  "solver": {"samples": 4000},
  "output": {"trajectories": 3}
}"#;

#[test]
fn abstract_bounds_simulate_round_trip() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), GAUSSIAN);
    let out = dir.path().join("out").display().to_string();
    let cache = dir.path().join("cache").display().to_string();

    let a = entrobound(&["abstract", "--config", &cfg, "--out", &out, "--cache", &cache]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let abs = dir.path().join("out/abstraction.json");
    assert!(abs.exists());

    let b = entrobound(&["bounds", "--config", &cfg, "--out", &out, "--abstraction", &abs.display().to_string()]);
    assert!(b.status.success());
    assert!(String::from_utf8_lossy(&b.stdout).starts_with("cells=9 lower="));

    let report = dir.path().join("out/bounds.json").display().to_string();
    let s = entrobound(&["simulate", "--config", &cfg, "--out", &out, "--report", &report, "--seed", "9"]);
    assert!(s.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&s.stdout).unwrap();
    assert_eq!(doc["bracket"]["inside"], true);
    assert_eq!(doc["estimates"]["kl"]["seed"], 9);
    assert_eq!(fs::read_to_string(dir.path().join("out/trajectories.csv")).unwrap().lines().count(), 1 + 3 * 3);
}

#[test]
fn sweep_flag_emits_csv() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), GAUSSIAN);
    let out = dir.path().display().to_string();
    let r = entrobound(&["bounds", "--config", &cfg, "--out", &out, "--sweep", "2..4"]);
    assert!(r.status.success());
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("N,lower,upper_global,upper_local"));
}

#[test]
fn seed_repeat_gives_identical_output() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), GAUSSIAN);
    let out = dir.path().display().to_string();
    let read = || fs::read(dir.path().join("simulation.json")).unwrap();
    assert!(entrobound(&["simulate", "--config", &cfg, "--out", &out, "--samples", "3000"]).status.success());
    let first = read();
    assert!(entrobound(&["simulate", "--config", &cfg, "--out", &out, "--samples", "3000"]).status.success());
    assert_eq!(first, read());
}

#[test]
fn bad_value_exits_2_with_field_path() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &GAUSSIAN.replace(r#""counts": [3, 3]"#, r#""counts": [0, 3]"#));
    let r = entrobound(&["abstract", "--config", &cfg, "--out", &dir.path().display().to_string()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("partition.counts"));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &GAUSSIAN.replace(r#""samples": 4000"#, r#""samples": 4000, "speed": 1"#));
    let r = entrobound(&["bounds", "--config", &cfg, "--out", &dir.path().display().to_string()]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr).to_string();
    assert!(err.contains("solver") && err.contains("speed"), "{err}");
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\"model\": ");
    let r = entrobound(&["abstract", "--config", &cfg]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_2() {
    let r = entrobound(&["abstract", "--config", "/nonexistent/entrobound.json"]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn zero_horizon_is_a_config_error() {
    let dir = tempdir().unwrap();
    let cfg = write_config(dir.path(), &GAUSSIAN.replace(r#""horizon": 2"#, r#""horizon": 0"#));
    let r = entrobound(&["bounds", "--config", &cfg, "--out", &dir.path().display().to_string()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("model.horizon"));
}
