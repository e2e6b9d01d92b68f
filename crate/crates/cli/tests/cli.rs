use std::path::{Path, PathBuf};
use std::process::Command;

use mfe_cli::{parse_config, run, GameConfig, Overrides};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(format!("{name}.json"))
}

fn mfe(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mfe")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

const MINIMAL: &str = r#"{
  "populations": [{
    "states": ["a", "b"],
    "actions": ["go"],
    "rewards": [{ "at": ["a", "go"], "value": 1 }],
    "transitions": [
      { "at": ["a", "go"], "row": [0, 1] },
      { "at": [1, 0], "row": [1, 0] }
    ]
  }]
}"#;

#[test]
fn minimal_config_gets_defaults() {
    let mut cfg = GameConfig::from_json(MINIMAL).unwrap();
    cfg.resolve().unwrap();
    assert_eq!(cfg.beta, 0.95);
    assert_eq!(cfg.solver.tol_outer, 1e-6);
    assert_eq!(cfg.solver.tol_inner, Some(1e-9));
    assert_eq!(cfg.solver.damping, "fp");
    assert!(cfg.populations[0].feasible.is_some());
    let report = run(&cfg);
    assert!(report.converged, "{:?}", report.error);
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(json["config"]["beta"], 0.95);
    assert_eq!(json["config"]["solver"]["tol_inner"], 1e-9);
}

#[test]
fn unknown_field_is_named() {
    let text = MINIMAL.replacen("\"states\"", "\"colour\": 1, \"states\"", 1);
    let err = GameConfig::from_json(&text).unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");
    let err = GameConfig::from_json(r#"{"populations": [], "betta": 0.5}"#).unwrap_err().to_string();
    assert!(err.contains("betta"), "{err}");
}

#[test]
fn semantic_errors_are_reported() {
    let bad = MINIMAL.replace("\"row\": [1, 0]", "\"row\": [0.5, 0.4]");
    let err = format!("{:#}", GameConfig::from_json(&bad).unwrap().resolve().unwrap_err());
    assert!(err.contains("non-stochastic"), "{err}");
    let bad = MINIMAL.replace("\"a\", \"go\"], \"value\"", "\"c\", \"go\"], \"value\"");
    let err = format!("{:#}", GameConfig::from_json(&bad).unwrap().resolve().unwrap_err());
    assert!(err.contains("unknown state \"c\""), "{err}");
}

#[test]
fn damping_strings() {
    assert!(mfe_cli::parse_damping("fp").is_ok());
    assert!(mfe_cli::parse_damping("fixed:0.5").is_ok());
    assert!(mfe_cli::parse_damping("fixed:1.5").is_err());
    assert!(mfe_cli::parse_damping("half").is_err());
}

#[test]
fn decoupled_example_has_no_exploitability() {
    let report = run(&parse_config(&example("decoupled")).unwrap());
    assert!(report.converged);
    assert!(report.exploitability.unwrap() <= 1e-8);
    assert!(report.markov.is_some());
}

#[test]
fn congestion_example_balances() {
    let report = run(&parse_config(&example("congestion")).unwrap());
    assert!(report.converged);
    let mu = &report.stationary.as_ref().unwrap().populations[0].mu;
    assert!((mu[0] - 0.5).abs() < 1e-4 && (mu[1] - 0.5).abs() < 1e-4);
}

#[test]
fn lifetime_and_pair_examples_converge() {
    for name in ["transient-lifetime", "two-population"] {
        let report = run(&parse_config(&example(name)).unwrap());
        assert!(report.converged, "{name}: {:?}", report.error);
    }
}

#[test]
fn overrides_apply_before_defaults() {
    let mut cfg = mfe_cli::load_config(&example("congestion")).unwrap();
    Overrides { tol: Some(1e-4), mode: Some(mfe_cli::Mode::Markov), horizon: Some(5), ..Default::default() }.apply(&mut cfg);
    cfg.resolve().unwrap();
    assert!((cfg.solver.tol_inner.unwrap() - 1e-7).abs() < 1e-20);
    let report = run(&cfg);
    assert_eq!(report.markov.as_ref().unwrap().horizon, 5);
}

#[test]
fn solver_errors_land_in_the_report() {
    let mut cfg = parse_config(&example("congestion")).unwrap();
    cfg.criterion = mfe_cli::CriterionKind::Total;
    let report = run(&cfg);
    assert!(!report.converged);
    assert!(report.error.as_deref().unwrap().contains("star"));
    assert_eq!(mfe_cli::exit_code(&report), 1);
}

#[test]
fn binary_is_deterministic_and_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let cfg = example("two-population");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(mfe(&["solve", cfg, "--seed", "3", "--out", a.to_str().unwrap()]).0, 0);
    assert_eq!(mfe(&["solve", cfg, "--seed", "3", "--out", b.to_str().unwrap()]).0, 0);
    for f in ["report.json", "trace.csv"] {
        let (x, y) = (std::fs::read_to_string(a.join(f)).unwrap(), std::fs::read_to_string(b.join(f)).unwrap());
        assert!(x == y, "{f} differs");
    }
    let trace = std::fs::read_to_string(a.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,exploitability,l1_change,theta_residual\n"));

    // the congestion flow from a corner needs thousands of averaging steps
    let corner = dir.path().join("corner.json");
    let text = std::fs::read_to_string(example("congestion")).unwrap().replace(
        r#""solver": { "mode": "stationary" }"#,
        r#""solver": { "mode": "markov", "initial": [[1, 0]], "horizon": 50 }"#,
    );
    std::fs::write(&corner, text).unwrap();
    let c = dir.path().join("c");
    let (code, _) = mfe(&["solve", corner.to_str().unwrap(), "--max-iter", "3", "--out", c.to_str().unwrap()]);
    assert_eq!(code, 2);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(c.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], false);

    let (code, err) = mfe(&["solve", "/nonexistent.json"]);
    assert_eq!(code, 1);
    assert!(err.contains("nonexistent"));

    let d = dir.path().join("d");
    let (code, _) = mfe(&["solve", cfg, "--criterion", "total", "--out", d.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(std::fs::read_to_string(d.join("report.json")).unwrap().contains("\"error\": \"population 0 has no"));
}
