use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qsmooth::io::{read_record_csv, PastStateWire, RetrodictionWire};
use qsmooth_cli::{load_config, load_config_with, Overrides};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn qsmooth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsmooth")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Writes a config with the experiment inline after applying `edit`.
fn edited_config(dir: &Path, command: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut experiment = read_json(&fixture("qubit_experiment.json"));
    edit(&mut experiment);
    let path = dir.join("config.json");
    let config = serde_json::json!({ "command": command, "experiment": experiment });
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn simulation_is_byte_identical_under_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let config = fixture("qubit.json");
    for out in [&a, &b] {
        let o = qsmooth(&["simulate", "--config", s(&config), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = qsmooth(&["simulate", "--config", s(&config), "--out", s(&c), "--seed", "8"]);
    assert!(o.status.success());
    let first = fs::read(a.join("record.csv")).unwrap();
    assert_eq!(first, fs::read(b.join("record.csv")).unwrap());
    assert_eq!(fs::read(a.join("outcomes.json")).unwrap(), fs::read(b.join("outcomes.json")).unwrap());
    assert_ne!(first, fs::read(c.join("record.csv")).unwrap());

    let record = read_record_csv::<f64, _>(first.as_slice()).unwrap();
    assert_eq!(record.n_steps(), 400);
    assert_eq!(record.channels(), 1);
    assert!(String::from_utf8(first).unwrap().starts_with("t,dY_1\n0.001,"));
}

#[test]
fn ensembles_write_one_record_per_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsmooth(&["simulate", "--config", s(&fixture("qubit.json")), "--out", s(dir.path()), "--ensemble", "3"]);
    assert!(o.status.success());
    for i in 0..3 {
        assert!(dir.path().join(format!("record_{i:04}.csv")).is_file());
        assert!(dir.path().join(format!("outcomes_{i:04}.json")).is_file());
    }
    let a = fs::read(dir.path().join("record_0000.csv")).unwrap();
    assert_ne!(a, fs::read(dir.path().join("record_0001.csv")).unwrap());
}

#[test]
fn echoed_config_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let overrides = Overrides {
        out: Some(out.clone()),
        seed: Some(99),
        ..Overrides::default()
    };
    let config = load_config_with(&fixture("qubit.json"), &overrides).unwrap();
    assert_eq!(config.experiment.seed, 99);
    assert_eq!(config.time_unit, "us");
    qsmooth_cli::run(&config).unwrap();

    let meta = read_json(&out.join("metadata.json"));
    let echoed = dir.path().join("echo.json");
    fs::write(&echoed, serde_json::to_string(&meta["config"]).unwrap()).unwrap();
    assert_eq!(load_config(&echoed).unwrap(), config);
}

#[test]
fn minimal_config_is_valid() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited_config(dir.path(), "simulate", |e| {
        let o = e.as_object_mut().unwrap();
        o.remove("efficiencies");
        o.remove("interventions");
        o.remove("seed");
        o["hamiltonian"] = serde_json::json!([[[0, 0], [0, 0]], [[0, 0], [0, 0]]]);
    });
    let config = load_config(&path).unwrap();
    let spec = config.spec().unwrap();
    assert_eq!(spec.model.efficiencies, vec![1.0]);
    assert!(spec.interventions.is_empty());
    assert_eq!(config.ensemble, 1);
}

#[test]
fn negative_efficiency_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited_config(dir.path(), "simulate", |e| e["efficiencies"] = serde_json::json!([-0.1]));
    let err = load_config(&path).unwrap_err();
    assert_eq!(err.kind(), "invalid_spec");
    assert!(err.to_string().contains("efficiencies[0]"));

    let o = qsmooth(&["simulate", "--config", s(&path), "--out", s(&dir.path().join("out"))]);
    assert!(!o.status.success());
    let body: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(body["error"]["kind"], "invalid_spec");
    assert!(body["error"]["violations"][0]["field"].as_str().unwrap().ends_with("efficiencies[0]"));
}

#[test]
fn parse_errors_point_at_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\n  \"command\": \"verify\",\n  \"experiment\": [1,\n}\n").unwrap();
    let err = load_config(&path).unwrap_err();
    assert_eq!(err.kind(), "parse");
    assert!(err.to_string().contains("line 4"), "{err}");

    let path = edited_config(dir.path(), "verify", |e| {
        e.as_object_mut().unwrap().remove("dt");
    });
    let err = load_config(&path).unwrap_err();
    assert!(err.to_string().contains("experiment") && err.to_string().contains("dt"), "{err}");
}

#[test]
fn record_is_required_for_filtering() {
    let o = qsmooth(&["filter", "--config", s(&fixture("qubit.json"))]);
    assert!(!o.status.success());
    let body: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(body["error"]["message"].as_str().unwrap().contains("record"));

    let o = qsmooth(&["filter", "--config", s(&fixture("qubit.json")), "--record", "/nonexistent/record.csv"]);
    assert!(!o.status.success());
}

#[test]
fn off_grid_intervention_is_snapped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = edited_config(dir.path(), "simulate", |e| e["interventions"][0]["tau"] = serde_json::json!(0.2004));
    let out = dir.path().join("out");
    let o = qsmooth(&["simulate", "--config", s(&path), "--out", s(&out)]);
    assert!(o.status.success());
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(stderr.contains("warning") && stderr.contains("0.2004"), "{stderr}");
    let meta = read_json(&out.join("metadata.json"));
    let note = &meta["snapped_interventions"][0];
    assert_eq!(note["requested_tau"], 0.2004);
    assert!((note["snapped_tau"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert_eq!(note["step"], 200);
}

#[test]
fn decoupled_probe_retrodicts_born_weights() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("decoupled.json");
    let sim = dir.path().join("sim");
    assert!(qsmooth(&["simulate", "--config", s(&config), "--out", s(&sim)]).status.success());
    let out = dir.path().join("retro");
    let o = qsmooth(&["retrodict", "--config", s(&config), "--out", s(&out), "--record", s(&sim.join("record.csv"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: RetrodictionWire = serde_json::from_value(read_json(&out.join("retrodiction.json"))).unwrap();
    assert_eq!(r.labels, vec![vec!["up".to_string()], vec!["down".to_string()]]);
    assert!((r.probabilities[0] - 0.3).abs() < 4.0 * f64::EPSILON);
    assert!((r.probabilities[1] - 0.7).abs() < 4.0 * f64::EPSILON);
}

#[test]
fn filter_and_smooth_use_revealed_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture("qubit.json");
    let sim = dir.path().join("sim");
    assert!(qsmooth(&["simulate", "--config", s(&config), "--out", s(&sim)]).status.success());
    let record = sim.join("record.csv");
    let outcomes = sim.join("outcomes.json");

    let concealed = qsmooth(&["filter", "--config", s(&config), "--out", s(&dir.path().join("f0")), "--record", s(&record)]);
    assert!(!concealed.status.success());
    let body: Value = serde_json::from_slice(&concealed.stderr).unwrap();
    assert_eq!(body["error"]["kind"], "missing_outcome");

    let f = dir.path().join("f");
    let args = ["--config", s(&config), "--out", s(&f), "--record", s(&record), "--outcomes", s(&outcomes)];
    let o = qsmooth(&[&["filter"], &args[..]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(f.join("expectations.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,sx,sz"));
    assert_eq!(lines.next(), Some("0,1,0"));
    assert_eq!(lines.count(), 400);

    let o = qsmooth(&[&["smooth"], &args[..]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series: Vec<PastStateWire> = serde_json::from_value(read_json(&f.join("past_states.json"))).unwrap();
    assert_eq!(series.len(), 401);
    assert_eq!(series[400].effect, vec![vec![[1.0, 0.0], [0.0, 0.0]], vec![[0.0, 0.0], [1.0, 0.0]]]);
}

#[test]
fn verify_passes_on_the_bundled_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsmooth(&["verify", "--config", s(&fixture("qubit.json")), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report = read_json(&dir.path().join("verify.json"));
    assert_eq!(report["passed"], true);
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["status"] != "fail"));
    assert_eq!(checks.iter().filter(|c| c["status"] == "pass").count(), 8);
}
