use std::path::PathBuf;
use std::process::{Command, Output};

use bwadapt::config::REFERENCE_CONFIG;
use bwadapt::sweep::CSV_HEADER;

fn bwadapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bwadapt")).args(args).output().unwrap()
}

fn reference_path() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/config/reference.toml")
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bwadapt-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn short_config() -> String {
    REFERENCE_CONFIG
        .replace("duration_s = 100000", "duration_s = 4000")
        .replace("warmup_s = 5000", "warmup_s = 400")
}

#[test]
fn policy_table_succeeds() {
    let out = bwadapt(&["policy-table", "--config", reference_path()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("web") && l.contains("0.6000000000")));
}

#[test]
fn config_errors_exit_1() {
    let out = bwadapt(&["policy-table", "--config", "/nonexistent/scenario.toml"]);
    assert_eq!(out.status.code(), Some(1));

    let bad = scratch("bad.toml", &REFERENCE_CONFIG.replace("gamma0 = 0.8", "gamma0 = 1.0"));
    let out = bwadapt(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma(4,0)"));
}

#[test]
fn runtime_errors_exit_3() {
    let cfg = scratch("short3.toml", &short_config());
    let out = bwadapt(&["simulate", "--config", cfg.to_str().unwrap(), "--reps", "0"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_writes_stable_csv() {
    let cfg = scratch("short.toml", &short_config());
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--lambda-grid", "0.4,0.9", "--reps", "2"];
    let a = bwadapt(&args);
    let b = bwadapt(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);

    let text = String::from_utf8(a.stdout).unwrap();
    let golden = include_str!("golden/csv_keys.txt");
    let keys: Vec<String> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    assert_eq!(keys, golden.lines().collect::<Vec<_>>());
}

#[test]
fn validate_passes() {
    let out = bwadapt(&["validate", "--arrivals", "200000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}
