use std::path::{Path, PathBuf};
use std::process::Command;

use mfsocial::cli::{self, manifest_hash_of, read_csv};
use mfsocial::linalg::{Matrix, Vector};
use mfsocial::model::{Horizon, ProblemSpec};

fn data(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str], out: &Path) -> i32 {
    let mut argv = vec!["mfsocial"];
    argv.extend_from_slice(args);
    argv.extend_from_slice(&["--out-dir", out.to_str().unwrap()]);
    cli::run(argv)
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn hash(dir: &Path) -> String {
    manifest_hash_of(&read(dir, "manifest.json")).unwrap()
}

fn write_spec(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["validate", &data("sec6.json")], dir.path()), cli::EXIT_OK);

    let mut bad: serde_json::Value = serde_json::from_str(&read(Path::new(&data("")), "sec6.json")).unwrap();
    bad["B"] = serde_json::json!([[1.0], [2.0]]);
    let p = write_spec(dir.path(), "bad.json", &bad.to_string());
    assert_eq!(run(&["validate", p.to_str().unwrap()], dir.path()), cli::EXIT_VALIDATION);

    let p = write_spec(dir.path(), "garbage.json", "{ not json");
    assert_eq!(run(&["validate", p.to_str().unwrap()], dir.path()), cli::EXIT_VALIDATION);
}

#[test]
fn usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["validate", "--bogus", &data("sec6.json")], dir.path()), cli::EXIT_USAGE);
    assert_eq!(run(&["frobnicate"], dir.path()), cli::EXIT_USAGE);
    let code = run(&["simulate", &data("sec6_finite.json"), "--dt", "0"], dir.path());
    assert_eq!(code, cli::EXIT_USAGE);
    let code = run(&["simulate", &data("sec6_finite.json"), "--T", "3"], dir.path());
    assert_eq!(code, cli::EXIT_USAGE);
}

#[test]
fn solver_failure_and_success() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["solve-finite", &data("example1_escape.json")], dir.path()), cli::EXIT_SOLVER);
    assert_eq!(run(&["solve-infinite", &data("sec6.json")], dir.path()), cli::EXIT_SOLVER);
    assert_eq!(run(&["value", &data("sec6_pinned.json")], dir.path()), cli::EXIT_SOLVER);

    assert_eq!(run(&["solve-finite", &data("example1.json")], dir.path()), cli::EXIT_OK);
    let csv = read(dir.path(), "solve_finite.csv");
    assert_eq!(manifest_hash_of(&csv).unwrap(), hash(dir.path()));
    let (header, rows) = read_csv(&csv).unwrap();
    assert_eq!(header, ["t", "P_11", "K_11", "s_1", "upsilon_eig_1"]);
    assert!(rows.len() > 100);
}

#[test]
fn divergence_exit_code() {
    // no weights, so no feedback; G = −A keeps the mean fixed while deviations grow like e^{30t}
    let dir = tempfile::tempdir().unwrap();
    let mut s = ProblemSpec::zeros(1, 1, Horizon::Finite(1.0));
    s.a = Matrix::from_element(1, 1, 30.0);
    s.g = Matrix::from_element(1, 1, -30.0);
    s.x0_cov = Matrix::from_element(1, 1, 1.0);
    s.b = Matrix::from_element(1, 1, 1.0);
    s.r = Matrix::from_element(1, 1, 1.0);
    s.x0_mean = Vector::from_element(1, 1.0);
    let p = write_spec(dir.path(), "explode.json", &s.to_json());
    let code = run(&["simulate", p.to_str().unwrap(), "--N", "2", "--reps", "2"], dir.path());
    assert_eq!(code, cli::EXIT_DIVERGENCE);
}

#[test]
fn outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = data("sec6_finite.json");
    let args = ["simulate", &spec, "--N", "4", "--reps", "4", "--paths", "--seed", "3"];
    assert_eq!(run(&args, dir.path()), cli::EXIT_OK);
    let h = hash(dir.path());
    for name in ["paths.csv", "average.csv"] {
        let text = read(dir.path(), name);
        assert_eq!(manifest_hash_of(&text).unwrap(), h);
        read_csv(&text).unwrap();
    }
    let sim: serde_json::Value = serde_json::from_str(&read(dir.path(), "simulate.json")).unwrap();
    assert_eq!(sim["manifest_hash"], h.as_str());
    assert_eq!(sim["agents"], 4);

    assert_eq!(run(&["gap", &spec, "--N-list", "1,3", "--reps", "4"], dir.path()), cli::EXIT_OK);
    let (header, rows) = read_csv(&read(dir.path(), "gap.csv")).unwrap();
    assert_eq!(header[..5], ["N", "decentralized", "centralized", "epsilon", "stderr"]);
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [1.0, 3.0]);

    assert_eq!(run(&["check", &data("sec6.json")], dir.path()), cli::EXIT_OK);
    let check: serde_json::Value = serde_json::from_str(&read(dir.path(), "check.json")).unwrap();
    assert_eq!(check["verdicts"]["agree"], true);

    assert_eq!(run(&["solve-infinite", &data("sec6_pinned.json"), "--T", "5"], dir.path()), cli::EXIT_OK);
    read_csv(&read(dir.path(), "solve_infinite.csv")).unwrap();
    let sol: serde_json::Value = serde_json::from_str(&read(dir.path(), "solve_infinite.json")).unwrap();
    assert!((sol["Pi"][0][0].as_f64().unwrap() - 0.3290).abs() < 1e-3);
}

#[test]
fn equal_manifests_give_equal_bytes_and_seed_changes_them() {
    let dir = tempfile::tempdir().unwrap();
    let spec = data("sec6_finite.json");
    let go = |seed: &str| {
        assert_eq!(run(&["simulate", &spec, "--N", "3", "--reps", "6", "--seed", seed], dir.path()), 0);
        read(dir.path(), "simulate.json")
    };
    let (a, b, c) = (go("1"), go("1"), go("2"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn binary_uses_output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mfsocial"))
        .args(["check", &data("sec6.json")])
        .env(cli::OUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(dir.path().join("check.json").exists());

    let status = Command::new(env!("CARGO_BIN_EXE_mfsocial"))
        .args(["solve-finite", &data("example1_escape.json")])
        .env(cli::OUT_DIR_ENV, dir.path())
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&status.stderr).contains("t = "));
}
