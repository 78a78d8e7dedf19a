use std::path::Path;
use std::process::{Command, Output};

const UPWIND: &str = include_str!("../../../configs/upwind_degenerate.toml");

fn stochfd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochfd"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

#[test]
fn reproduce_prints_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = stochfd(&["reproduce-example-2-4"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let s = text(&out);
    for value in ["-0.4161468365", "-0.4131150562", "-0.415389039", "-0.4161470333"] {
        assert!(s.contains(value), "{s}");
    }
}

#[test]
fn check_passes_on_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = stochfd(&["check"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(text(&out).contains("parabolicity"));
}

#[test]
fn converge_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = stochfd(&["converge", "--format", "json", "--out", "report"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("report")).unwrap().collect();
    assert!(!files.is_empty());
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, UPWIND.replace("theta = [0.5]", "theta = [0.25]")).unwrap();
    let out = stochfd(&["--config", cfg.to_str().unwrap(), "check"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    assert!(text(&out).contains("scheme.theta"));
    std::fs::write(&cfg, "[problem\n").unwrap();
    let out = stochfd(&["--config", cfg.to_str().unwrap(), "converge"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
    // The preset has no closed-form initial data to expand.
    let out = stochfd(&["expansion-verify"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn blow_up_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("unstable.toml");
    let text_cfg = UPWIND.replace("horizon = 0.5", "horizon = 50.0").replace("dt = 1e-4", "dt = 0.05");
    assert_ne!(text_cfg, UPWIND);
    std::fs::write(&cfg, text_cfg).unwrap();
    let out = stochfd(&["--config", cfg.to_str().unwrap(), "converge"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", text(&out));
    assert!(text(&out).contains("seed = 1"));
}
