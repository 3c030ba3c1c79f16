use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn infill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infill"))
        .args(args)
        .output()
        .expect("spawn infill")
}

fn ok(args: &[&str]) -> String {
    let out = infill(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const SMALL: &[&str] = &[
    "--set",
    "model.d_model=16",
    "--set",
    "model.d_ff=32",
    "--set",
    "train.epochs=2",
];

fn trained(root: &Path, objective: &str) -> (PathBuf, PathBuf) {
    let data = root.join("data");
    ok(&["synth", "--seed", "2", "--size", "30", "--out", s(&data)]);
    let model = root.join(objective);
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--out",
        s(&model),
        "--objective",
        objective,
    ];
    args.extend_from_slice(SMALL);
    ok(&args);
    (data, model)
}

#[test]
fn synth_writes_three_splits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(
        infill(&["synth", "--size", "20", "--out", s(&out)]).status.code(),
        Some(2)
    );
    ok(&["synth", "--seed", "4", "--size", "40", "--out", s(&out)]);
    for split in ["train", "dev", "test"] {
        let text = fs::read_to_string(out.join(format!("{split}.jsonl"))).unwrap();
        assert!(text.lines().count() > 0, "{split} is empty");
    }
}

#[test]
fn cold_decoding_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = trained(dir.path(), "obs_lm");
    let test = data.join("test.jsonl");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "decode",
            "--model",
            s(&model),
            "--data",
            s(&test),
            "--out",
            s(&out),
            "--strategy",
            "cold",
            "--seed",
            "3",
            "--limit",
            "3",
            "--set",
            "decode.cold_iters=15",
        ]);
        fs::read(out).unwrap()
    };
    let a = run("a.jsonl");
    assert_eq!(a, run("b.jsonl"));
    assert_eq!(a.iter().filter(|b| **b == b'\n').count(), 3);
}

#[test]
fn failures_and_eval_on_decoded_output() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = trained(dir.path(), "base");
    let test = data.join("test.jsonl");
    let preds = dir.path().join("p.jsonl");
    ok(&["decode", "--model", s(&model), "--data", s(&test), "--out", s(&preds)]);
    let md = ok(&["failures", "--data", s(&test), "--predictions", s(&preds), "--n", "1"]);
    assert_eq!(md.matches("## Case").count(), 1);
    let eval = dir.path().join("eval");
    ok(&[
        "eval",
        "--predictions",
        s(&preds),
        "--data",
        s(&test),
        "--out",
        s(&eval),
    ]);
    assert!(eval.join("report.json").is_file());
}

#[test]
fn report_merges_runs() {
    let dir = tempfile::tempdir().unwrap();
    let quick = configs().join("quick.conf");
    let a = dir.path().join("runA");
    let b = dir.path().join("runB");
    let only_base = ["--set", "run.systems=base/greedy"];
    ok(&["run", s(&quick), "--out", s(&a), only_base[0], only_base[1]]);
    ok(&[
        "run",
        s(&quick),
        "--out",
        s(&b),
        only_base[0],
        only_base[1],
        "--set",
        "decode.seed=9",
    ]);
    let md = ok(&["report", s(&a), s(&b)]);
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| run")).collect();
    assert_eq!(rows.len(), 2, "{md}");
    let header = md.lines().find(|l| l.starts_with("| System")).unwrap();
    assert_eq!(header.matches('|').count(), 7, "{header}");
}

#[test]
fn exit_codes() {
    assert_eq!(infill(&["synth", "--bogus"]).status.code(), Some(1));
    assert_eq!(infill(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(infill(&["--help"]).status.code(), Some(0));
    let missing = infill(&[
        "eval",
        "--predictions",
        "/nonexistent/p.jsonl",
        "--data",
        "/nonexistent/d.jsonl",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}
