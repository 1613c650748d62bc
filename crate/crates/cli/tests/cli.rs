//! The binary's exit codes and stage reporting.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[medium]
sigma_tilde = 0.4
ell_over_lambda = 100.0
range_over_ell = 100.0

[array]
aperture_over_ell = 48.0
receivers = 30
subarray_fraction = 0.5

[frequencies]
band = [0.5, 1.0]
count = 3

[grid]
n_cross = 4
n_range = 4
range_factor = 0.25

[data]
sparsity = 2
samples = 120
amplitude = [1.0, 2.0]
"#;

fn focalmap(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_focalmap"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, TINY).unwrap();
    path
}

#[test]
fn missing_inputs_name_the_stage_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = focalmap(&["learn"], &cfg, &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("stage `learn` failed"), "{stderr}");
}

#[test]
fn invalid_config_fails_in_config_stage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, TINY.replace("sparsity = 2", "sparsity = 17")).unwrap();
    let out = focalmap(&["pipeline"], &path, &dir.path().join("run"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage `config` failed"));
}

#[test]
fn staged_commands_produce_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    for stage in ["simulate", "learn", "localize", "image"] {
        let out = focalmap(&[stage], &cfg, &run);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = focalmap(&["report"], &cfg, &run);
    assert!(out.status.success());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["k"], 16);
    assert!(run.join("summary.json").exists());
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_focalmap"))
        .args(["pipeline", "--preset", "nonexistent"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("possible values"));
}
