use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_smoothing");

fn reference_model(mu: f64) -> Value {
    json!({
        "label": "reference",
        "offspring": {"family": "Fixed", "n": 2},
        "weight": {"family": "Lognormal", "mu": mu, "sigma": (8.0 * 2f64.ln()).sqrt()},
        "inhom": {"family": "Constant", "b": 1.0}
    })
}

fn critical_mu() -> f64 {
    -4.0 * 2f64.ln()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("WORKERS").output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_reports_critical_tangent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &json!({"model": reference_model(critical_mu())}),
    );
    let out_dir = dir.path().join("out");
    let out = run(&["analyze", "--config", arg(&cfg), "--output-dir", arg(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out_dir.join("mellin.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["regime"], "critical_tangent");
    assert!((report["report"]["alpha"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn malformed_model_exits_2_with_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = reference_model(critical_mu());
    model["weight"] = json!({"family": "Lognormal", "mu": -1.0, "sigma": -2.0});
    let cfg = write_config(dir.path(), "cfg.json", &json!({"model": model}));
    let out = run(&["analyze", "--config", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/model/weight/sigma"), "{err}");
}

#[test]
fn unknown_config_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &json!({"model": reference_model(critical_mu()), "simulate": {"sampels": 10}}),
    );
    let out = run(&["simulate", "--config", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/simulate/sampels"));
}

#[test]
fn usage_error_exits_2() {
    assert_eq!(run(&["simulate", "--samples", "many"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--only", "no_such_check"]).status.code(), Some(2));
}

#[test]
fn perturbed_model_fails_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &json!({"model": reference_model(critical_mu() * 1.01)}),
    );
    let out_dir = dir.path().join("out");
    let out = run(&[
        "verify",
        "--config",
        arg(&cfg),
        "--only",
        "mellin_regime",
        "--output-dir",
        arg(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let record: Value = serde_json::from_slice(&fs::read(out_dir.join("verify.json")).unwrap()).unwrap();
    assert_eq!(record["passed"], false);
    assert_eq!(record["checks"][0]["measured"]["regime"], "two_root");
}

fn simulate_config(dir: &Path) -> std::path::PathBuf {
    write_config(
        dir,
        "cfg.json",
        &json!({
            "model": reference_model(critical_mu()),
            "seed": 11,
            "simulate": {
                "samples": 3000,
                "policy": {"weight_floor": 1e-5, "depth_cap": 200, "node_cap": 100000, "floor_ladder": [1e-3]}
            }
        }),
    )
}

#[test]
fn simulate_is_byte_identical_across_runs_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = run(&[
            "simulate",
            "--config",
            arg(&cfg),
            "--output-dir",
            arg(out),
            "--workers",
            workers,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let strip = |p: &Path| {
        fs::read_to_string(p.join("samples.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("# workers"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));

    let o = run(&[
        "simulate",
        "--config",
        arg(&cfg),
        "--output-dir",
        arg(&a),
        "--workers",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let first = fs::read_to_string(a.join("samples.csv")).unwrap();
    let o = run(&[
        "simulate",
        "--config",
        arg(&cfg),
        "--output-dir",
        arg(&b),
        "--workers",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first, fs::read_to_string(b.join("samples.csv")).unwrap());
}

#[test]
fn tail_reads_simulated_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = simulate_config(dir.path());
    let out = dir.path().join("out");
    assert_eq!(
        run(&["simulate", "--config", arg(&cfg), "--output-dir", arg(&out)])
            .status
            .code(),
        Some(0)
    );
    let csv = out.join("samples.csv");
    let o = run(&[
        "tail",
        "--samples",
        arg(&csv),
        "--window",
        "3,100",
        "--with-log",
        "false",
        "--alpha",
        "0.5",
        "--output-dir",
        arg(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&fs::read(out.join("tail.json")).unwrap()).unwrap();
    assert_eq!(
        report["report"]["n_samples"].as_u64().unwrap() + censored_rows(&csv),
        3000
    );
    assert!(report["report"]["C_plus_hat"]["value"].as_f64().unwrap() > 0.0);
}

fn censored_rows(csv: &Path) -> u64 {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter(|l| l.split(',').nth(6) == Some("true"))
        .count() as u64
}

#[test]
fn fixpoint_writes_grid_and_poisson() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &json!({"model": reference_model(critical_mu()), "fixpoint": {"pool_size": 5000}}),
    );
    let out = dir.path().join("out");
    let o = run(&["fixpoint", "--config", arg(&cfg), "--output-dir", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert!(grid.lines().any(|l| l == "t,phi,one_minus_phi"));
    let poisson = fs::read_to_string(out.join("poisson.csv")).unwrap();
    assert!(poisson.lines().any(|l| l.starts_with("# C_tail=")));
}

#[test]
fn fixpoint_without_critical_root_writes_grid_only() {
    let dir = tempfile::tempdir().unwrap();
    let model = json!({
        "label": "subcritical",
        "offspring": {"family": "Fixed", "n": 2},
        "weight": {"family": "Uniform01Power", "exponent": 1.5},
        "inhom": {"family": "Exponential", "rate": 1.0}
    });
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &json!({"model": model, "fixpoint": {"pool_size": 5000}}),
    );
    let out = dir.path().join("out");
    let o = run(&["fixpoint", "--config", arg(&cfg), "--output-dir", arg(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("grid.csv").exists());
    assert!(!out.join("poisson.csv").exists());
}
