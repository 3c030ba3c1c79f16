use std::fs;
use std::path::Path;

use infill::harness::{read_predictions, run_experiment, ConfigMap, Report};

fn quick() -> ConfigMap {
    ConfigMap::from_file(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quick.conf")).unwrap()
}

#[test]
fn quick_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let summary = run_experiment(&quick(), &run).unwrap();
    assert_eq!(summary.resumed, 0);
    assert_eq!(summary.report.rows.len(), 3);
    for f in [
        "config.resolved",
        "data/train.jsonl",
        "data/dev.jsonl",
        "data/test.jsonl",
        "models/base/final.ckpt",
        "models/base/training.json",
        "models/obs_lm/loss.csv",
        "predictions.jsonl",
        "report.json",
        "report.md",
        "failures.md",
        "manifest.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let (preds, _) = read_predictions(&run.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.len(), 12);
    assert_eq!(fs::read_dir(run.join("traces/obs_lm-cold")).unwrap().count(), 4);
    let report = Report::load(run.join("report.json")).unwrap();
    assert_eq!(report, summary.report);
    let failures = fs::read_to_string(run.join("failures.md")).unwrap();
    assert_eq!(failures.matches("## Case").count(), 2);
}

#[test]
fn resume_after_truncation_matches_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    run_experiment(&quick(), &run).unwrap();
    let pred_path = run.join("predictions.jsonl");
    let full = fs::read(&pred_path).unwrap();

    // keep five records and half of the sixth
    let cut = full
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == b'\n')
        .nth(4)
        .map(|(i, _)| i + 1)
        .unwrap();
    fs::write(&pred_path, &full[..cut + 10]).unwrap();
    let again = run_experiment(&quick(), &run).unwrap();
    assert_eq!(again.resumed, 5);
    assert_eq!(fs::read(&pred_path).unwrap(), full);
}

#[test]
fn a_different_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut cfg = quick();
    cfg.set("run.limit", "2").unwrap();
    run_experiment(&cfg, &run).unwrap();
    assert!(run_experiment(&quick(), &run).is_err());
}
