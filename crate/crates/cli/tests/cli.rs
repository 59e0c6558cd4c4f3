use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn latentdep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latentdep")).args(args).env("LATENTDEP_LOG", "warn").output().unwrap()
}

fn with_stdin(args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_latentdep"))
        .args(args)
        .env("LATENTDEP_LOG", "warn")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn generate(dir: &Path) {
    let o = latentdep(&["generate", "--profile", "tiny", "--seed", "3", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn train(data: &Path, out: &Path, preset: &str) -> Output {
    latentdep(&[
        "train",
        "--preset",
        preset,
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "2",
        "--set",
        "updates_per_epoch=3",
        "--set",
        "batch_size=8",
        "--set",
        "embedding=8",
        "--set",
        "lstm_hidden=6",
        "--set",
        "attention=8,8",
        "--set",
        "gcn_width=8",
        "--set",
        "tagger_hidden=8",
    ])
}

#[test]
fn generate_writes_three_splits_and_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(a.path());
    generate(b.path());
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    let counts: Vec<u64> = manifest["splits"].as_array().unwrap().iter().map(|s| s["count"].as_u64().unwrap()).collect();
    assert_eq!(counts, vec![500, 100, 100]);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = latentdep(&["generate", "--profile", "enormous", "--out", d]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("enormous"));

    let o = latentdep(&["train", "--preset", "gold", "--data", d, "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = latentdep(&["train", "--preset", "gold", "--data", d]);
    assert_eq!(o.status.code(), Some(2), "missing dataset files");

    let o = latentdep(&["eval", "--checkpoint", dir.path().join("none.ckpt").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = latentdep(&["train", "--preset", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_and_parse_agree() {
    let data = tempfile::tempdir().unwrap();
    let runs = tempfile::tempdir().unwrap();
    generate(data.path());
    let out = runs.path().join("mc");
    let o = train(data.path(), &out, "mc-forward");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();

    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("epoch,train_loss,dev_acc"));

    let ckpt = out.join("best.ckpt");
    let o = latentdep(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.path().to_str().unwrap()]);
    assert!(o.status.success());
    let eval: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(eval, summary["dev"]);

    // corrupt a copy of the checkpoint
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let bad = runs.path().join("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let o = latentdep(&["eval", "--checkpoint", bad.to_str().unwrap(), "--data", data.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));

    let sentences = "[max 3 4 [med 9 3 ] 1 ]\n[sm 5 ]\n";
    let c = ckpt.to_str().unwrap();
    let first = with_stdin(&["parse", "--checkpoint", c], sentences);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let text = stdout(&first);
    assert_eq!(text.lines().filter(|l| l.starts_with("heads\t")).count(), 2);
    assert_eq!(text.lines().filter(|l| l.starts_with("tree\t(*")).count(), 2);
    assert_eq!(stdout(&with_stdin(&["parse", "--checkpoint", c], sentences)), text);

    let sampled = |seed: &str| stdout(&with_stdin(&["parse", "--checkpoint", c, "--sample", "--seed", seed], sentences));
    assert_eq!(sampled("4"), sampled("4"));
}

#[test]
fn gradcheck_reports_every_mode() {
    let o = latentdep(&["gradcheck", "--cases", "3", "--min-n", "3", "--max-n", "4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    let relaxed: Vec<&str> = text.lines().filter(|l| l.starts_with("Relaxed")).collect();
    assert_eq!(relaxed.len(), 3);
    assert!(relaxed.iter().all(|l| l.ends_with("\tpass")));
    assert_eq!(text.lines().filter(|l| l.ends_with("non-differentiable")).count(), 3);
    assert!(text.lines().filter(|l| l.starts_with("StraightThrough")).all(|l| l.ends_with("pass") || l.ends_with("expected-mismatch")));
}

#[test]
fn bench_rows_and_bad_lengths() {
    let o = latentdep(&["bench", "--lengths", "6", "--min-time", "0.01"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.lines().nth(1).unwrap().starts_with("6\t"));

    let o = latentdep(&["bench", "--lengths", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
