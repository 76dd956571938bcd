//! End-to-end runs of the binary: outputs, manifests, exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rsrgx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsrgx")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

/// Runs `command`, then re-runs it from its own manifest into a second
/// directory and compares every CSV and JSONL file byte for byte.
fn assert_reproducible(command: &str, config: &str) {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.ini", config);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = rsrgx(&[command, "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let manifest = a.join("manifest.ini");
    let text = fs::read_to_string(&manifest).unwrap();
    assert!(text.contains(&format!("command = {command}")));
    let second = rsrgx(&[command, "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(code(&second), 0, "{}", String::from_utf8_lossy(&second.stderr));
    let mut compared = 0;
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name.ends_with(".csv") || name.ends_with(".jsonl") {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{command}: {name} differs");
            compared += 1;
        }
    }
    assert!(compared >= 2, "{command}: only {compared} data files");
}

#[test]
fn rsrg_rerun_from_manifest_is_identical() {
    assert_reproducible("rsrg", "[model]\nn_rungs = 2000\n\n[run]\nseed = 5\nsnapshots = gamma:5\n");
}

#[test]
fn spectrum_rerun_from_manifest_is_identical() {
    assert_reproducible("spectrum", "[model]\nn_rungs = 3\n\n[run]\nseeds = 2\n");
}

#[test]
fn phase_scan_rerun_from_manifest_is_identical() {
    assert_reproducible("phase-scan", "[model]\nn_rungs = 500\n\n[run]\nbetas = 0, 5\nseeds = 2\n");
}

#[test]
fn flow_pde_rerun_from_manifest_is_identical() {
    assert_reproducible("flow-pde", "[run]\npoints = 512\ngamma_end = 2\n");
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.ini", "[model]\nn_rungs = 500\n\n[run]\nseed = 1\nsnapshots = none\n");
    let out = tmp.path().join("o");
    let o = rsrgx(&["rsrg", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(out.join("manifest.ini")).unwrap().contains("seed = 9"));
}

#[test]
fn emit_flags_select_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = rsrgx(&["flow-pde", "--emit", "svg", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(out.join("densities.svg").exists());
    assert!(!out.join("metrics.csv").exists());
    assert!(out.join("manifest.ini").exists());
}

#[test]
fn rules_regression_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = rsrgx(&["rules", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let reference = fs::read_to_string(out.join("reference.csv")).unwrap();
    assert!(reference.lines().count() > 1);
    assert!(out.join("manifest.ini").exists(), "manifest is written on failure too");
}

#[test]
fn config_errors_exit_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    for text in ["[model]\nn_rung = 4\n", "[modle]\n", "[model]\nJ = gaussian(1)\n", "[run\n", "[run]\npolicy = sideways\n"] {
        let cfg = write_config(tmp.path(), "bad.ini", text);
        let o = rsrgx(&["rsrg", "--config", &cfg, "--out", out]);
        assert_eq!(code(&o), 4, "{text:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(code(&rsrgx(&["rsrg", "--bogus"])), 4);
    assert_eq!(code(&rsrgx(&["--help"])), 0);
}

#[test]
fn manifest_for_another_command_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&rsrgx(&["flow-pde", "--out", out.to_str().unwrap(), "--emit", "csv"])), 0);
    let manifest = out.join("manifest.ini");
    assert_eq!(code(&rsrgx(&["rsrg", "--config", manifest.to_str().unwrap(), "--out", out.to_str().unwrap()])), 4);
}

#[test]
fn mass_losing_equation_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.ini", "[run]\nsystem = all2s\np_equation = as_printed\npoints = 512\n");
    let out = tmp.path().join("o");
    let o = rsrgx(&["flow-pde", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
