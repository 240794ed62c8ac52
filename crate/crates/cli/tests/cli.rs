use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epiflow_cli::{validate_report, verify_manifest, OUT_ENV};
use serde_json::{json, Value};

fn epiflow(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_epiflow"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove(OUT_ENV);
    if let Some(dir) = env_out {
        cmd.env(OUT_ENV, dir);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) {
    let out = epiflow(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a 4×4 city configuration small enough to train in a test.
fn small_config(dir: &Path, extra: Value) -> PathBuf {
    let mut config = json!({
        "seed": 5,
        "city": { "grid_rows": 4, "grid_cols": 4 },
        "env": { "horizon": 6, "t_start": 2 },
        "eval_horizon": 6,
        "agent": { "hidden_width": 8, "batch_size": 8, "buffer_capacity": 200 },
        "train": { "total_steps": 30, "checkpoint_every": 0 },
        "agent_t_starts": [0, 2]
    });
    for (k, v) in extra.as_object().unwrap() {
        config[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_defaults_to_the_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("city");
    ok(&["gen-data", "--out", s(&out)]);
    let meta = read_json(&out.join("od.csv.meta.json"));
    assert_eq!(meta["num_regions"], 323);
    assert!(verify_manifest(&out).unwrap().is_empty());
    let manifest = read_json(&out.join("manifest.json"));
    let paths: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert_eq!(paths, ["config.json", "od.csv", "od.csv.meta.json"]);
}

#[test]
fn reruns_with_one_seed_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        ok(&["gen-data", "--config", s(&config), "--out", s(out)]);
    }
    ok(&["gen-data", "--config", s(&config), "--out", s(&c), "--seed", "6"]);
    let od = |d: &Path| std::fs::read(d.join("od.csv")).unwrap();
    assert_eq!(od(&a), od(&b));
    assert_ne!(od(&a), od(&c));
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn invalid_configurations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let bad_grid = small_config(dir.path(), json!({ "city": { "grid_rows": 0, "grid_cols": 4 } }));
    let r = epiflow(&["gen-data", "--config", s(&bad_grid), "--out", s(&out)], None);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("error:"));

    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{ "sede": 3 }"#).unwrap();
    let r = epiflow(&["gen-data", "--config", s(&unknown), "--out", s(&out)], None);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("sede"));

    let late = small_config(dir.path(), json!({}));
    let r = epiflow(&["simulate", "--config", s(&late), "--out", s(&out), "--t-start", "6"], None);
    assert!(!r.status.success());

    let r = epiflow(&["train", "--ablation", "no-gnn", "--out", s(&out)], None);
    assert!(!r.status.success());
}

#[test]
fn simulate_without_intervention_keeps_all_mobility() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let out = dir.path().join("sim");
    ok(&["simulate", "--config", s(&config), "--out", s(&out), "--policy", "no-intervention"]);
    let summary = read_json(&out.join("metrics.json"));
    assert_eq!(summary["policy"], "no-intervention");
    assert_eq!(summary["metrics"]["q"], 1.0);
    for f in ["episode.csv", "rewards.csv", "trajectory.csv", "figures/h_curve.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(verify_manifest(&out).unwrap().is_empty());
}

#[test]
fn unknown_policy_and_missing_checkpoint_fail() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let out = dir.path().join("sim");
    let r = epiflow(&["simulate", "--config", s(&config), "--out", s(&out), "--policy", "ep-magic"], None);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("ep-magic"));

    let missing = dir.path().join("nope.json");
    for cmd in ["simulate", "evaluate"] {
        let r = epiflow(&[cmd, "--config", s(&config), "--out", s(&out), "--checkpoint", s(&missing)], None);
        assert!(!r.status.success());
        assert!(String::from_utf8_lossy(&r.stderr).contains("nope.json"));
    }
}

#[test]
fn zero_step_training_writes_only_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let out = dir.path().join("train");
    ok(&["train", "--config", s(&config), "--out", s(&out), "--steps", "0"]);
    let checkpoints: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("checkpoint-"))
        .collect();
    assert_eq!(checkpoints, ["checkpoint-00000000.json"]);
}

#[test]
fn no_expert_ablation_disables_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let out = dir.path().join("train");
    ok(&["train", "--config", s(&config), "--out", s(&out), "--ablation", "no-expert"]);
    let checkpoint = read_json(&out.join("checkpoint-00000030.json"));
    assert_eq!(checkpoint["payload"]["schedule"]["initial"], 0.0);
}

#[test]
fn training_then_evaluation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let runs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for run in &runs {
        ok(&["train", "--config", s(&config), "--out", s(run)]);
    }
    let bytes = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(bytes(runs[0].join("manifest.json")), bytes(runs[1].join("manifest.json")));

    let checkpoint = runs[0].join("checkpoint-00000030.json");
    let eval = dir.path().join("eval");
    ok(&["evaluate", "--config", s(&config), "--out", s(&eval), "--checkpoint", s(&checkpoint)]);
    let report = read_json(&eval.join("report.json"));
    validate_report(&report).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5 + 2);
    let agent: Vec<u64> = rows
        .iter()
        .filter(|r| r["policy"] == "agent")
        .map(|r| r["t_start"].as_u64().unwrap())
        .collect();
    assert_eq!(agent, [0, 2]);

    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&config), "--out", s(&sim), "--checkpoint", s(&checkpoint)]);
    assert_eq!(read_json(&sim.join("metrics.json"))["policy"], "agent");
}

#[test]
fn baseline_evaluation_reports_every_expert() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let out = dir.path().join("eval");
    ok(&["evaluate", "--config", s(&config), "--out", s(&out)]);
    let report = read_json(&out.join("report.json"));
    validate_report(&report).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let fixed = rows.iter().find(|r| r["policy"].as_str().unwrap().starts_with("ep-fixed")).unwrap();
    assert!((fixed["metrics"]["q"].as_f64().unwrap() - 0.15).abs() < 1e-9);
    assert!(rows.iter().all(|r| r["t_start"] == 2));
    assert!(out.join("report.csv").is_file());
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let from_file = dir.path().join("from-file");
    let from_env = dir.path().join("from-env");
    let from_flag = dir.path().join("from-flag");
    let config = small_config(dir.path(), json!({ "out": s(&from_file) }));
    let run = |flag: bool, env: bool| {
        let mut args = vec!["gen-data", "--config", s(&config)];
        if flag {
            args.extend(["--out", s(&from_flag)]);
        }
        let r = epiflow(&args, env.then_some(from_env.as_path()));
        assert!(r.status.success());
    };
    run(false, false);
    assert!(from_file.join("manifest.json").is_file());
    run(false, true);
    assert!(from_env.join("manifest.json").is_file());
    run(true, true);
    assert!(from_flag.join("manifest.json").is_file());
    assert!(read_json(&from_flag.join("config.json")).get("out").is_none());
}
