use std::path::{Path, PathBuf};
use std::process::Command;

use saga_cli::{run_bench, run_train, to_json, BudgetSetting, RunConfig};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/tiny20/config.json")
}

fn config() -> RunConfig {
    RunConfig::load(&fixture()).unwrap()
}

#[test]
fn zero_epochs_leave_parameters_alone() {
    let mut cfg = config();
    cfg.epochs = 0;
    let r = run_train(&cfg).unwrap();
    assert!(r.metrics.epochs.is_empty());
    for (a, b) in r.initial.iter().zip(&r.trained) {
        assert_eq!(a.params, b.params);
    }
}

#[test]
fn unknown_model_lists_valid_names() {
    let mut cfg = config();
    cfg.model = "gat".into();
    let err = run_train(&cfg).unwrap_err().to_string();
    for name in ["gcn", "commnet", "mpgcn", "ggcn", "ggnn"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn same_config_gives_identical_metrics() {
    let cfg = config();
    let a = to_json(&run_train(&cfg).unwrap().metrics).unwrap();
    let b = to_json(&run_train(&cfg).unwrap().metrics).unwrap();
    assert_eq!(a, b);
    let a = to_json(&run_bench(&cfg).unwrap().report).unwrap();
    let b = to_json(&run_bench(&cfg).unwrap().report).unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_interval_strategies_agree() {
    let mut cfg = config();
    cfg.interval_size = None;
    cfg.devices = 1;
    let r = run_bench(&cfg).unwrap().report;
    assert_eq!(r.intervals, 1);
    let first = &r.strategies[0];
    for row in &r.strategies[1..] {
        assert_eq!(
            (row.swap_bytes, row.load_bytes, row.spill_bytes, row.makespan, row.stall_time),
            (first.swap_bytes, first.load_bytes, first.spill_bytes, first.makespan, first.stall_time),
            "{}",
            row.strategy
        );
    }
}

#[test]
fn locality_moves_fewest_bytes_when_streaming() {
    let cfg = config();
    assert_eq!(cfg.budget_bytes, Some(BudgetSetting::Keyword("tight".into())));
    let r = run_bench(&cfg).unwrap().report;
    assert_eq!(r.intervals, 3);
    let bytes = |name: &str| r.strategies.iter().find(|s| s.strategy == name).unwrap().swap_bytes;
    assert!(bytes("locality") > 0);
    assert!(bytes("locality") < bytes("stage"));
    assert!(bytes("locality") < bytes("dest"));
    assert!(r.strategies.iter().all(|s| s.output_max_abs_diff == 0.0));
}

#[test]
fn ring_beats_nonring_on_a_shared_link() {
    let cfg = config();
    assert_eq!(cfg.devices, 2);
    let r = run_bench(&cfg).unwrap().report.ring;
    assert!(r.ring_makespan < r.nonring_makespan, "{r:?}");
    assert_eq!(r.ring_host_bytes * 2.0, r.nonring_host_bytes);
}

#[test]
fn binary_round_trip() {
    let exe = env!("CARGO_BIN_EXE_saga");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ok = Command::new(exe)
        .args(["synth", "--out", data.to_str().unwrap(), "--vertices", "16", "--edges", "50", "--seed", "3"])
        .status()
        .unwrap();
    assert!(ok.success());
    let cfg = data.join("config.json");
    let metrics = dir.path().join("train.json");
    let ok = Command::new(exe)
        .args(["train", "--config", cfg.to_str().unwrap(), "--out", metrics.to_str().unwrap(), "--threads", "2"])
        .status()
        .unwrap();
    assert!(ok.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(v["epochs"].as_array().unwrap().len(), 10);

    let timeline = dir.path().join("ring.csv");
    let out = Command::new(exe)
        .args(["bench", "--config", fixture().to_str().unwrap(), "--no-ring", "--timeline", timeline.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["ring"]["selected"], "nonring");
    let csv = std::fs::read_to_string(&timeline).unwrap();
    assert!(csv.starts_with("step,device,action,chunk,start,end\n"));
    assert!(!csv.contains("fetch"));

    let out = Command::new(exe).args(["train", "--config", cfg.to_str().unwrap(), "--strategy", "lru"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lru"));
}
