use std::fs;
use std::process::{Command, Output};

fn xqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xqc")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

#[test]
fn invalid_configuration_exits_with_2() {
    for args in [
        &["solve-qc", "--h", "24"][..],
        &["solve-qc", "--scheme", "quadratic"],
        &["solve-full", "--example", "ellipse"],
        &["optimize-gamma", "--mode", "random"],
        &["solve-qc", "--gamma-min", "5", "--gamma-max", "4"],
    ] {
        let out = xqc(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("kind=invalid-config"), "{err}");
    }
    let err = String::from_utf8_lossy(&xqc(&["solve-qc", "--h", "24"]).stderr).into_owned();
    assert!(err.contains("divide"), "{err}");
}

#[test]
fn unreadable_config_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[run]\nspacing = 4\n").unwrap();
    let out = xqc(&["solve-qc", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solve_qc_writes_results_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[run]\nexample = \"square\"\nscheme = \"linear-H\"\nh = 32.0\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = xqc(&["solve-qc", "--config", cfg.to_str().unwrap(), "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("n_dof_standard=162"), "{stdout}");
    let qc = fs::read_to_string(out_dir.join("qc_square_linear-H_32.csv")).unwrap();
    let mut lines = qc.lines();
    assert!(lines.next().unwrap().starts_with("# xqc "));
    assert!(lines.next().unwrap().starts_with("# config_sha256 "));
    let header = qc.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "h,n_dof,eps_u");
    let state = fs::read_to_string(out_dir.join("state_square_linear-H_32.csv")).unwrap();
    assert_eq!(state.lines().filter(|l| !l.starts_with('#')).count(), 1 + 257 * 257);
    assert!(out_dir.join("errfield_square_linear-H_32.csv").exists());
}
