use std::path::Path;
use std::process::{Command, Output};

use hetpar::engine::RunReport;
use hetpar::RunConfig;

fn hetpar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetpar")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = hetpar(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn datagen_is_deterministic_and_counts_records() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["datagen", "--task", "synthetic-classify", "--out", p(out), "--n", "1000", "--shards", "3"]);
    }
    let mut total = 0;
    for i in 0..3 {
        let name = format!("shard-{i:04}.hsd");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
        let text = ok(&["inspect", p(&a.join(&name))]);
        assert!(text.contains("field x f64 rank 1") && text.contains("field y i64 rank 1"));
        let line = text.lines().find(|l| l.starts_with("records ")).unwrap();
        total += line[8..].parse::<usize>().unwrap();
    }
    assert_eq!(total, 1000);
}

#[test]
fn mlm_segments_flip_once() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["datagen", "--task", "mlm-nsp", "--out", p(dir.path()), "--n", "40", "--docs", "2", "--shards", "1"]);
    let text = ok(&["inspect", "--full", p(&dir.path().join("shard-0000.hsd"))]);
    assert!(text.contains("field segments i64 rank 1"));
    assert_eq!(text.lines().filter(|l| l.starts_with("record ")).count(), 40);
}

#[test]
fn inspect_rejects_unknown_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"NOPE and some bytes").unwrap();
    let out = hetpar(&["inspect", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unrecognized format"));
}

#[test]
fn fresh_checkpoint_header() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck");
    ok(&[
        "train",
        "--task",
        "synthetic-classify",
        "--instances",
        "50",
        "--steps",
        "0",
        "--seed",
        "42",
        "--checkpoint-dir",
        p(&ck),
    ]);
    let text = ok(&["inspect", p(&ck.join("ckpt_000000.hck"))]);
    for want in ["epoch 0", "step 0", "seed 42", "param l0.w [20x64]"] {
        assert!(text.lines().any(|l| l == want), "missing {want:?} in\n{text}");
    }
}

#[test]
fn config_errors_exit_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed=3\nno_such_key=1\n").unwrap();
    assert_eq!(
        hetpar(&["train", "--task", "synthetic-classify", "--config", p(&cfg), "--steps", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(hetpar(&["train", "--task", "synthetic-classify"]).status.code(), Some(2));
    assert_eq!(hetpar(&["train", "--steps", "1"]).status.code(), Some(2));
    assert_eq!(hetpar(&["bogus"]).status.code(), Some(2));
}

#[test]
fn training_reduces_loss_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.txt");
    ok(&[
        "train",
        "-q",
        "--backend",
        "inproc",
        "--world",
        "4",
        "--task",
        "synthetic-classify",
        "--steps",
        "200",
        "--set",
        "lr=0.1",
        "--report",
        p(&report),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    let losses: Vec<f64> = RunReport::parse_losses(&text).into_iter().map(|(_, l)| l).collect();
    assert_eq!(losses.len(), 200);
    let head: f64 = losses[..20].iter().sum();
    let tail: f64 = losses[180..].iter().sum();
    assert!(tail < 0.5 * head, "loss did not fall: {head} -> {tail}");
    let echoed = RunReport::parse_config(&text);
    let cfg = RunConfig::from_pairs(echoed.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
    assert_eq!(cfg.world_size, 4);
    assert_eq!(cfg.to_pairs(), echoed);
}

#[test]
fn world_times_update_freq_is_what_matters() {
    let dir = tempfile::tempdir().unwrap();
    let run = |world: &str, k: &str, name: &str| {
        let path = dir.path().join(name);
        ok(&[
            "train",
            "-q",
            "--world",
            world,
            "--update-freq",
            k,
            "--task",
            "synthetic-classify",
            "--instances",
            "200",
            "--steps",
            "30",
            "--report",
            p(&path),
        ]);
        let text = std::fs::read_to_string(path).unwrap();
        let bits: Vec<u64> = RunReport::parse_losses(&text).into_iter().map(|(_, l)| l.to_bits()).collect();
        let digest = text.lines().find(|l| l.starts_with("param_digest=")).unwrap().to_string();
        (bits, digest)
    };
    assert_eq!(run("4", "2", "a.txt"), run("8", "1", "b.txt"));
}

#[test]
fn bench_single_world_is_baseline() {
    let out =
        ok(&["bench", "--task", "synthetic-classify", "--instances", "100", "--worlds", "1", "--total-steps", "4"]);
    let row = out.lines().nth(1).unwrap();
    assert!(
        row.trim_end().ends_with("1.00      1.00") || row.split_whitespace().rev().take(2).all(|x| x == "1.00"),
        "{row}"
    );
    assert!(row.split_whitespace().nth(3) == Some("4"));
}
