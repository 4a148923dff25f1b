use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mslod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mslod")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn small(dir: &Path) -> Vec<String> {
    [
        "--nh",
        "32",
        "--nH",
        "4",
        "--phi1",
        "-1,0,0",
        "--phi2",
        "0.01,0,0",
        "--output-dir",
        dir.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn with<'a>(head: &[&'a str], tail: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(tail.iter().map(String::as_str)).collect()
}

#[test]
fn solve_writes_results_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let args = small(&out_dir);
    let out = mslod(&with(&["solve"], &args));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["result.csv", "timings.csv", "active_lo.csv", "active_hi.csv", "control.csv", "state.csv"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let result = fs::read_to_string(out_dir.join("result.csv")).unwrap();
    assert!(result.contains("converged,true"));
    assert!(stdout(&out).contains("jtilde"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = mslod(&["solve", "--nh", "32", "--nH", "5", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mesh.nH"));
    let out = mslod(&["solve", "--set", "mesh.unknown=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = mslod(&["solve", "--phi1", "1,0,0", "--phi2", "0,0,0", "--nh", "8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unconverged_active_set_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let args = small(&out_dir);
    let out = mslod(&with(&["solve", "--max-iter", "0"], &args));
    assert_eq!(out.status.code(), Some(3));
    assert!(out_dir.join("result.csv").exists());
}

#[test]
fn corrupt_cache_exits_with_four_until_rebuilt() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let out_dir = dir.path().join("run");
    let mut args = small(&out_dir);
    args.extend(["--cache".to_string(), cache.to_str().unwrap().to_string()]);

    assert!(mslod(&with(&["solve"], &args)).status.success());
    let first = fs::read(out_dir.join("result.csv")).unwrap();
    let files: Vec<_> = fs::read_dir(&cache).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(files.len(), 1);
    let name = files[0].file_name().unwrap().to_str().unwrap().to_string();
    assert!(name.starts_with("basis_") && name.ends_with(".bin"), "{name}");

    // a cache hit reproduces the result exactly
    assert!(mslod(&with(&["solve"], &args)).status.success());
    assert_eq!(fs::read(out_dir.join("result.csv")).unwrap(), first);

    fs::write(&files[0], b"MSLODB1\0junk").unwrap();
    let out = mslod(&with(&["solve"], &args));
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--rebuild"));

    assert!(mslod(&with(&["solve", "--rebuild"], &args)).status.success());
    assert_eq!(fs::read(out_dir.join("result.csv")).unwrap(), first);
}

#[test]
fn unwritable_output_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let args = small(&blocker.join("sub"));
    let out = mslod(&with(&["solve"], &args));
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn single_point_sweep_writes_empty_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let args = small(dir.path());
    let out = mslod(&with(&["sweep", "--sweep-param", "H", "--sweep-values", "4"], &args));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2], "slope,,,,,,,");
}

#[test]
fn basis_build_and_info() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.bin");
    let out = mslod(&["basis", "build", "--nh", "32", "--nH", "4", "--k", "2", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let info = mslod(&["basis", "info", path.to_str().unwrap()]);
    assert!(info.status.success());
    let text = stdout(&info);
    assert!(text.contains("coarse        1/4"));
    assert!(text.contains("fine          1/32"));
    assert!(text.contains("columns       9"));

    fs::write(&path, b"not a basis").unwrap();
    assert_eq!(mslod(&["basis", "info", path.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn field_gen_and_show() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bin");
    let out = mslod(&[
        "field",
        "gen",
        "--nh",
        "32",
        "--coeff",
        "heterogeneous",
        "--seed",
        "5",
        "--blocks",
        "8",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let show = mslod(&["field", "show", path.to_str().unwrap()]);
    assert!(show.status.success());
    let text = stdout(&show);
    assert!(text.contains("heterogeneous"));
    assert!(text.contains("seed        5"));
    assert!(text.contains("resolution  32"));
}

#[test]
fn validate_runs_the_oracle_suite() {
    let out = mslod(&["validate", "--instances", "3"]);
    assert!(out.status.success(), "{}\n{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().filter(|l| l.contains("enum gap")).count(), 3);
}
