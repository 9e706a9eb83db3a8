use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn reloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reloop")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = reloop(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pipeline(dir: &Path) -> String {
    let data = dir.join("train.jsonl");
    let test = dir.join("test.jsonl");
    let run = dir.join("run");
    let report = dir.join("report.csv");
    ok(&["synth", "--n", "24", "--seed", "3", "--out", s(&data)]);
    ok(&["synth", "--n", "16", "--seed", "4", "--out", s(&test)]);
    ok(&[
        "train",
        "--out-dir",
        s(&run),
        "--data",
        s(&data),
        "--set",
        "epochs=2",
        "--set",
        "dim=8",
    ]);
    for f in [
        "config.toml",
        "trace.jsonl",
        "checkpoint.json",
        "metrics.csv",
        "eval.csv",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    ok(&[
        "eval",
        "--ckpt",
        s(&run.join("checkpoint.json")),
        "--data",
        s(&test),
        "--report",
        s(&report),
    ]);
    let trace = fs::read_to_string(run.join("trace.jsonl")).unwrap();
    let n = fs::read_to_string(&data).unwrap().lines().count();
    assert_eq!(trace.lines().count(), 2 * n);
    fs::read_to_string(report).unwrap() + &fs::read_to_string(run.join("metrics.csv")).unwrap()
}

#[test]
fn synth_train_eval_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline(a.path());
    let rb = pipeline(b.path());
    assert!(ra.starts_with("probes,halluc_rate"));
    assert_eq!(ra, rb);
}

#[test]
fn written_config_round_trips_through_train() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    ok(&["synth", "--n", "8", "--out", s(&data)]);
    let first = dir.path().join("a");
    ok(&[
        "train",
        "--out-dir",
        s(&first),
        "--data",
        s(&data),
        "--set",
        "epochs=1",
        "--set",
        "dim=4",
    ]);
    let second = dir.path().join("b");
    ok(&[
        "train",
        "--config",
        s(&first.join("config.toml")),
        "--out-dir",
        s(&second),
        "--data",
        s(&data),
    ]);
    assert_eq!(
        fs::read(first.join("checkpoint.json")).unwrap(),
        fs::read(second.join("checkpoint.json")).unwrap()
    );
}

#[test]
fn pseudo_attn_writes_grid_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dump.json");
    let sharp = [0.7, 0.1, 0.1, 0.1];
    let flat = [0.25; 4];
    let body = serde_json::json!({
        "rows": 2,
        "cols": 2,
        "tokens": ["red", "the"],
        "attention": [[[sharp]], [[flat]]],
    });
    fs::write(&dump, body.to_string()).unwrap();
    let out = dir.path().join("heat.csv");
    ok(&["pseudo-attn", "--dump", s(&dump), "--out", s(&out)]);
    let csv = fs::read_to_string(&out).unwrap();
    let cells: Vec<f64> = csv
        .split([',', '\n'])
        .filter(|c| !c.is_empty())
        .map(|c| c.parse().unwrap())
        .collect();
    assert_eq!(csv.lines().count(), 2);
    assert_eq!(cells.len(), 4);
    assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(cells[0] > cells[3]);
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert!(side.is_object());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    ok(&["synth", "--n", "4", "--out", s(&data)]);
    let run = s(&dir.path().join("r")).to_string();
    for args in [
        vec!["train", "--out-dir", &run, "--data", s(&data), "--set", "no_such_key=1"],
        vec!["train", "--out-dir", &run, "--data", s(&data), "--set", "epochs=lots"],
        vec![
            "train",
            "--out-dir",
            &run,
            "--data",
            s(&data),
            "--set",
            "learning_rate=-1",
        ],
        vec![
            "eval",
            "--ckpt",
            "/nonexistent/ck.json",
            "--data",
            s(&data),
            "--report",
            "/tmp/x.csv",
        ],
        vec!["stress", "--mode", "answer", "--fraction", "2", "--out-dir", &run],
    ] {
        let out = reloop(&args);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
