use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_levy-contract");

const QUICK: &str = "n_paths = 200\nk_max = 1\neval_points = 4\ndt = 0.01\ncertify_points = 7\n";

fn run(dir: &Path, config: Option<&str>, args: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    if let Some(text) = config {
        let path = dir.join("input.toml");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.arg("--out").arg(dir.join("out")).args(args).output().unwrap()
}

fn csv(dir: &Path, name: &str) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("out").join(name))
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<String> {
    let i = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[i].clone()).collect()
}

#[test]
fn diagonal_ltv_defaults_pass_and_write_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), None, &["--experiment", "ltv_2d_diagonal"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["paths.csv", "bounds.csv", "audit.csv", "report.txt"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f} missing");
    }
    let audit = csv(dir.path(), "audit.csv");
    assert_eq!(
        audit[0].join(","),
        "k,t,n,mse,ci_low,ci_high,bound_rhs,margin,std_err,hard_violation,low_confidence,kind,strategy,experiment,seed,version"
    );
    assert_eq!(audit.len(), 1 + 4 * 20);
    assert!(column(&audit, "experiment").iter().all(|e| e == "ltv_2d_diagonal"));
    let bounds = csv(dir.path(), "bounds.csv");
    assert_eq!(bounds[0].join(","), "kind,k,s,t,beta,kappa,rhs_total,strategy,std_err,experiment,seed,version");
    assert!(column(&bounds, "kind").iter().all(|k| k == "shot_ltv"));
    let paths = csv(dir.path(), "paths.csv");
    assert_eq!(paths[0].join(","), "path_id,time,x_1,x_2,y_1,y_2,is_jump,experiment,seed,version");
    let report = fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(report.contains("repository-defined"));
}

#[test]
fn overstated_alpha_exits_nonzero_with_violations() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("experiment = \"tracking_1d\"\nalpha = 2.0\n{QUICK}");
    let out = run(dir.path(), Some(&cfg), &[]);
    assert_eq!(out.status.code(), Some(1));
    let audit = csv(dir.path(), "audit.csv");
    assert!(column(&audit, "hard_violation").iter().any(|v| v == "1"));
}

#[test]
fn unknown_experiment_names_allowed_values() {
    let dir = TempDir::new().unwrap();
    for out in [
        run(dir.path(), None, &["--experiment", "ltv_3d"]),
        run(dir.path(), Some("experiment = \"ltv_3d\"\n"), &[]),
    ] {
        assert_eq!(out.status.code(), Some(2));
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("nonlinear_2d, tracking_1d, ltv_2d_diagonal, ltv_2d_triangular, custom"), "{err}");
    }
}

#[test]
fn every_config_error_is_listed() {
    let dir = TempDir::new().unwrap();
    let out = run(
        dir.path(),
        Some("experiment = \"nonlinear_2d\"\nlambda = \"fast\"\ndt = -1.0\ncolour = 3\n"),
        &["--strategy", "exact"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["lambda:", "dt:", "colour:", "--strategy:"] {
        assert!(err.contains(key), "{key} not reported in {err}");
    }
}

#[test]
fn replay_is_bit_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("experiment = \"nonlinear_2d\"\nseed = 11\n{QUICK}");
    assert_eq!(run(dir.path(), Some(&cfg), &[]).status.code(), Some(0));
    let first: Vec<_> = ["paths.csv", "bounds.csv", "audit.csv"]
        .iter()
        .map(|f| fs::read(dir.path().join("out").join(f)).unwrap())
        .collect();
    // replay from the emitted config, on more threads
    let replay = TempDir::new().unwrap();
    let emitted = fs::read_to_string(dir.path().join("out/config.toml")).unwrap();
    fs::write(replay.path().join("input.toml"), &emitted).unwrap();
    let out = Command::new(BIN)
        .env("LEVY_CONTRACT_THREADS", "3")
        .arg("--config")
        .arg(replay.path().join("input.toml"))
        .arg("--out")
        .arg(replay.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    for (f, bytes) in ["paths.csv", "bounds.csv", "audit.csv"].iter().zip(first) {
        assert_eq!(fs::read(replay.path().join("out").join(f)).unwrap(), bytes, "{f} differs");
    }
}

#[test]
fn flags_override_config() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("experiment = \"ltv_2d_diagonal\"\n{QUICK}");
    let out = run(dir.path(), Some(&cfg), &["--seed", "5", "--paths", "250", "--strategy", "loose_max_nng"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let audit = csv(dir.path(), "audit.csv");
    assert!(column(&audit, "seed").iter().all(|s| s == "5"));
    assert!(column(&audit, "n").iter().all(|n| n == "250"));
    assert!(column(&audit, "strategy").iter().all(|s| s.starts_with("loose_max_nng")));
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(BIN)
        .env("LEVY_CONTRACT_THREADS", "zero")
        .args(["--experiment", "ltv_2d_diagonal", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn sweep_column(dir: &Path, cfg: &str, spec: &str, name: &str) -> Vec<f64> {
    let out = run(dir, Some(cfg), &["--sweep", spec]);
    assert!(out.status.code() != Some(2) && out.status.code() != Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    column(&csv(dir, "sweep.csv"), name).iter().map(|v| v.parse().unwrap()).collect()
}

#[test]
fn eta_sweep_on_scalar_shot_increases_kappa() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("experiment = \"tracking_1d\"\ngamma = 0.0\n{QUICK}");
    let kappa = sweep_column(dir.path(), &cfg, "eta=0.1,0.2,0.4", "kappa");
    assert_eq!(kappa.len(), 3);
    assert!(kappa.windows(2).all(|w| w[1] > w[0]), "{kappa:?}");
}

#[test]
fn lambda_sweep_scales_expected_jumps() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("experiment = \"ltv_2d_diagonal\"\n{QUICK}");
    let jumps = sweep_column(dir.path(), &cfg, "lambda=0.5,1,2", "expected_jumps");
    assert_eq!(jumps, vec![1.0, 2.0, 4.0]);
}

#[test]
fn condition_number_sweep_rhs_nondecreasing() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("experiment = \"ltv_2d_diagonal\"\n{QUICK}");
    let rhs = sweep_column(dir.path(), &cfg, "condition_number=1,4,16", "rhs");
    assert!(rhs.windows(2).all(|w| w[1] >= w[0]), "{rhs:?}");
}

#[test]
fn condition_number_sweep_needs_ltv() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), None, &["--experiment", "tracking_1d", "--sweep", "condition_number=1,4"]);
    assert_eq!(out.status.code(), Some(2));
}
