//! End-to-end runs of the `ldkrr` binary.

use std::path::Path;
use std::process::{Command, Output};

fn ldkrr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldkrr")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL_SWEEP: &str = r#"
profile = "exp"
s = 1.0
gamma = 1.5
d_grid = [6, 8, 10, 12]
replicates = 2
seed = 9

[lambda]
policy = "balance"
"#;

#[test]
fn rates_query_prints_exponents() {
    let out = ldkrr(&["rates", "--s", "1.5", "--gamma", "2", "--method", "krr"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("d_exponent -1.5\n"), "{text}");
    assert!(text.contains("n_exponent -0.75\n"));
    assert!(text.contains("lambda_exponent 0.75\n"));
}

#[test]
fn rates_curve_and_figure() {
    let out = ldkrr(&["rates", "--s", "2", "--gamma-max", "3", "--step", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("s,gamma,method,family,p,period_kind,d_exponent"));
    let dir = tempfile::tempdir().unwrap();
    let fig = dir.path().join("fig.csv");
    let out = ldkrr(&["rates", "--figure", fig.to_str().unwrap(), "--gamma-max", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&fig).unwrap();
    assert!(text.contains("ntk_relu2,") && text.contains("minimax"));
    let bad = ldkrr(&["rates", "--s", "0.5", "--gamma", "0.4"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn spectrum_of_linear_kernel() {
    let out = ldkrr(&["spectrum", "--profile", "poly:[0,1]", "--d", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["mu"], serde_json::json!([0.0, 0.25]));
    assert_eq!(json["mult"], serde_json::json!([1, 4]));
    assert_eq!(json["K"], 1);
}

#[test]
fn ntk_spectrum_needs_fixed_degree() {
    assert_eq!(ldkrr(&["spectrum", "--profile", "ntk-relu2", "--d", "5"]).status.code(), Some(2));
    let out = ldkrr(&["spectrum", "--profile", "ntk-relu2", "--d", "5", "--degree", "6"]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["mu"].as_array().unwrap().len(), 7);
}

#[test]
fn validation_errors_exit_one() {
    assert_eq!(ldkrr(&["simulate", "--config", "missing.toml"]).status.code(), Some(1));
    let unknown = ldkrr(&["spectrum", "--d", "3", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("Usage"));
    assert_eq!(ldkrr(&["spectrum", "--profile", "poly:[x]", "--d", "3"]).status.code(), Some(1));
    assert_eq!(ldkrr(&["spectrum", "--d", "1"]).status.code(), Some(1));
    assert_eq!(ldkrr(&["verify", "--criteria", "99"]).status.code(), Some(1));
    assert_eq!(ldkrr(&["--help"]).status.code(), Some(0));
}

#[test]
fn quantities_and_conditions() {
    let out = ldkrr(&["quantities", "--d", "20", "--s", "1", "--gamma", "1.5", "--points", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.starts_with("d,lambda,n1,n2,m2,q1,q2,m1_zonal\n"));
    assert_eq!(text.lines().count(), 6);

    let out = ldkrr(&["conditions", "--d", "100", "--n", "10000", "--l", "1", "--s", "1", "--gamma", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let first = json["ratios"][0]["value"].as_f64().unwrap();
    assert!((first - 0.1121).abs() < 5e-4, "{first}");
    assert_eq!(json["ratios"][0]["pass"], true);
}

fn simulate(dir: &Path, name: &str) -> Vec<u8> {
    let config = dir.join("sweep.toml");
    std::fs::write(&config, SMALL_SWEEP).unwrap();
    let out_path = dir.join(name);
    let out = ldkrr(&["simulate", "--config", config.to_str().unwrap(), "--output", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read(out_path).unwrap()
}

#[test]
fn simulate_is_deterministic_and_fits() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv");
    let b = simulate(dir.path(), "b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 2);

    let input = dir.path().join("a.csv");
    // No cell at this scale meets the conditions, so the default fit has nothing to use.
    let strict = ldkrr(&["fit", "--input", input.to_str().unwrap()]);
    assert_eq!(strict.status.code(), Some(2));
    let out = ldkrr(&["fit", "--input", input.to_str().unwrap(), "--include-unverified", "--axis", "n"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["n_points"], 4);
    assert_eq!(json["axis"], "log_n");
    assert!(json["slope"].as_f64().unwrap() < 0.0);
}

#[test]
fn verify_runs_selected_criteria() {
    let out = ldkrr(&["verify", "--criteria", "1,4"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("PASS [1]") && text.contains("PASS [4]"), "{text}");
}
