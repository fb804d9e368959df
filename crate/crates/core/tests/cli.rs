use std::path::Path;
use std::process::{Command, Output};

use bayes_ext::report::{RunManifest, Table, CIRCLE_HEADER, EXPANSION_HEADER, SPIKED_HEADER, TIMING_HEADER};
use tempfile::TempDir;

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayes-ext"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn header(path: &Path) -> Vec<String> {
    Table::read(path).unwrap().header
}

#[test]
fn zero_trials_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&["circle-risk", "--trials", "0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(!dir.path().join("circle_risk.csv").exists());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(&["spiked-risk", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(
        run(&["spiked-risk", "--lambda-grid", "1,-2"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn circle_risk_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let args = ["circle-risk", "--trials", "2000", "--seed", "11"];
    assert!(run(&[&args[..], &["--out", "a.csv"]].concat(), dir.path())
        .status
        .success());
    assert!(run(&[&args[..], &["--out", "b.csv"]].concat(), dir.path())
        .status
        .success());
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(header(&dir.path().join("a.csv")), CIRCLE_HEADER);
    let t = Table::read(&dir.path().join("a.csv")).unwrap();
    assert_eq!(t.rows.len(), 3);

    let m = RunManifest::read(&dir.path().join("a.manifest.json")).unwrap();
    assert_eq!(m.subcommand, "circle-risk");
    assert_eq!(m.seed, Some(11));
    assert_eq!(m.config["trials"], 2000);
    assert_eq!(m.config["model"], "circle");
    assert!(!m.version.is_empty());
}

#[test]
fn config_file_is_read_and_flags_win() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"n": 40, "trials": 500, "seed": 3}"#).unwrap();
    let out = run(
        &["circle-risk", "--config", "c.json", "--trials", "700", "--out", "r.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = RunManifest::read(&dir.path().join("r.manifest.json")).unwrap();
    assert_eq!(m.config["n"], 40);
    assert_eq!(m.config["trials"], 700);
    assert_eq!(m.seed, Some(3));

    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(
        run(&["circle-risk", "--config", "bad.json"], dir.path()).status.code(),
        Some(2)
    );
}

#[test]
fn spiked_default_grid_gives_fifteen_rows() {
    let dir = TempDir::new().unwrap();
    let out = run(
        &[
            "spiked-risk",
            "--trials",
            "3",
            "--draws",
            "100",
            "--burn-in",
            "50",
            "--y-samples",
            "50",
            "--svg",
            "s.svg",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let t = Table::read(&dir.path().join("spiked_risk.csv")).unwrap();
    assert_eq!(t.header, SPIKED_HEADER);
    assert_eq!(t.rows.len(), 15);
    let svg = std::fs::read_to_string(dir.path().join("s.svg")).unwrap();
    assert!(svg.starts_with("<?xml") || svg.starts_with("<svg"));
    let m = RunManifest::read(&dir.path().join("spiked_risk.manifest.json")).unwrap();
    assert_eq!(m.outputs.len(), 2);
}

#[test]
fn expansion_and_benchmark_headers() {
    let dir = TempDir::new().unwrap();
    assert!(run(&["verify-expansion", "--n-list", "50,100"], dir.path())
        .status
        .success());
    let t = Table::read(&dir.path().join("verify_expansion.csv")).unwrap();
    assert_eq!(t.header, EXPANSION_HEADER);
    assert_eq!(t.rows.len(), 2);

    assert!(run(
        &["benchmark-eval", "--l", "6", "--draws", "50", "--points", "20"],
        dir.path()
    )
    .status
    .success());
    assert_eq!(header(&dir.path().join("benchmark_eval.csv")), TIMING_HEADER);
    assert!(dir.path().join("benchmark_eval.manifest.json").exists());
}

#[test]
fn version_flag() {
    let dir = TempDir::new().unwrap();
    let out = run(&["--version"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("bayes-ext "));
}
