use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kyleback"))
}

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

fn small_config(out: &Path) -> String {
    format!(
        r#"{{
  "market": {{ "horizon": 1.0, "sigma": [[1.0]], "gamma": 0.1 }},
  "prior": {{ "kind": "gaussian", "mean": [0.0], "cov": [[1.0]] }},
  "fixed_point": {{ "nodes_per_axis": 401 }},
  "simulation": {{
    "n_paths": 4000, "n_steps": 100, "seed": 3, "thin_paths": 2, "thin_every": 10,
    "deviations": [{{ "kind": "early_stop", "fraction": 0.8 }}],
    "checks": {{ "wealth_gap": false }}
  }},
  "output": "{}",
  "stages": ["all"]
}}"#,
        out.display()
    )
}

#[test]
fn shipped_configs_validate() {
    for name in ["gaussian_1d.json", "risk_neutral_1d.json"] {
        let o = bin().args(["validate", "--config"]).arg(config_dir().join(name)).output().unwrap();
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}

#[test]
fn malformed_config_exits_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let body = small_config(dir.path()).replace(r#""sigma": [[1.0]], "#, "");
    let cfg = write_config(dir.path(), &body);
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("market") && err.contains("sigma"), "{err}");
}

#[test]
fn regime_violation_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = small_config(dir.path()).replace(r#""gamma": 0.1"#, r#""gamma": 5.0"#);
    let cfg = write_config(dir.path(), &body);
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn simulation_without_potential_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config(dir.path()));
    let o = bin().args(["run", "--stages", "simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("potential.csv"), "{}", stderr(&o));
}

#[test]
fn oracle_stage_alone() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &small_config(&out));
    let o = bin().args(["run", "--stages", "oracle", "--config"]).arg(&cfg).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("oracle.json")).unwrap()).unwrap();
    let a = doc["a"][0][0].as_f64().unwrap();
    assert!((a - 0.951249).abs() < 1e-6, "{a}");
    assert!(!out.join("checks.json").exists());
}

#[test]
fn full_run_writes_outputs_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &small_config(&out));
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "oracle.json",
        "potential.csv",
        "fixed_point.json",
        "plotdata_densities.csv",
        "ensemble_summary.json",
        "paths.csv",
        "plotdata_prices.csv",
        "checks.json",
        "plotdata_utility.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("checks.json")).unwrap()).unwrap();
    assert_eq!(doc["all_pass"], Value::Bool(true));
    assert!(doc["metadata"]["generated_unix"].is_u64());
    let checks = doc["checks"].as_array().unwrap();
    assert!(checks.len() > 20);
    for c in checks {
        for key in ["name", "statistic", "threshold", "pass", "rule", "reference"] {
            assert!(c.get(key).is_some(), "{key} missing in {c}");
        }
    }
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    for name in ["hessian_cap", "fixed_point_matches_oracle", "bridge_landing", "utility_global", "deviation_strictly_worse"] {
        assert!(names.contains(&name), "{name} not in {names:?}");
    }
    let header = fs::read_to_string(out.join("paths.csv")).unwrap();
    assert!(header.starts_with("path_id,t,y0,xi0,p0\n"));
}

#[test]
fn seed_override_changes_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = small_config(&out).replace(r#""seed": 3,"#, r#""seed": 3, "model": "oracle","#);
    let cfg = write_config(dir.path(), &body);
    let summary = |seed: &str| -> Value {
        let o = bin()
            .args(["run", "--stages", "simulate", "--seed", seed, "--config"])
            .arg(&cfg)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_str(&fs::read_to_string(out.join("ensemble_summary.json")).unwrap()).unwrap()
    };
    let a = summary("1");
    let b = summary("1");
    let c = summary("2");
    assert_eq!(a["summary"], b["summary"]);
    assert_ne!(a["summary"]["mean_wealth"], c["summary"]["mean_wealth"]);
    assert_eq!(c["summary"]["seed"], 2);
}
