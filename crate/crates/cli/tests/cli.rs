use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hvlad");

fn hvlad(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn hvlad")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

const SMALL: &str = "trunk_channels=4,4,8,8\nembed_dim=16\nclusters=4\nbatch_size=4\ncrop_s=0.5\nlr=0.01\n";

/// Corpus, manifest, warp conversion and spectrogram cache in `dir`.
fn prepared(dir: &Path) {
    ok(hvlad(dir, &["synth-corpus", "--out", "corpus", "--speakers", "4", "--utterances", "3", "--duration-s", "0.8"]));
    ok(hvlad(dir, &["pair", "--corpus", "corpus", "--out", "m.jsonl", "--per-speaker", "3", "--seed", "1"]));
    let conv = format!("{BIN} synth-convert --source {{source}} --out {{out}} {{targets}}");
    ok(hvlad(dir, &["convert", "--manifest", "m.jsonl", "--converter", &conv, "--out-dir", "conv"]));
    ok(hvlad(dir, &["extract", "--manifest", "m.jsonl", "--cache", "cache"]));
    std::fs::write(dir.join("small.cfg"), SMALL).unwrap();
}

fn train(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", "small.cfg", "train", "--manifest", "m.jsonl", "--cache", "cache"];
    args.extend_from_slice(extra);
    hvlad(dir, &args)
}

#[test]
fn pair_is_reproducible_and_reports_corpus_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(hvlad(d, &["synth-corpus", "--out", "corpus", "--speakers", "3", "--utterances", "2", "--duration-s", "0.3"]));
    for out in ["a.jsonl", "b.jsonl"] {
        ok(hvlad(d, &["pair", "--corpus", "corpus", "--out", out, "--per-speaker", "2", "--seed", "4"]));
    }
    let a = std::fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 1 + 6);

    let missing = hvlad(d, &["pair", "--corpus", "nowhere", "--out", "c.jsonl"]);
    assert_eq!(code(&missing), 3);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere"));
    assert!(missing.stdout.is_empty());
    assert_eq!(code(&hvlad(d, &["pair", "--corpus", "corpus", "--out", "c.jsonl", "--n-targets", "4"])), 2);
}

#[test]
fn bad_arguments_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hvlad(tmp.path(), &["train", "--manifest", "m.jsonl", "--out-dir", "r", "--variant", "resnet"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("possible values: baseline1, baseline2, baseline3, hvlad"));
    assert_eq!(code(&hvlad(tmp.path(), &["--jobs", "0", "report", "x.json"])), 2);
    assert_eq!(code(&hvlad(tmp.path(), &["frobnicate"])), 2);
}

#[test]
fn zero_steps_writes_only_the_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepared(d);
    ok(train(d, &["--out-dir", "run", "--steps", "0"]));
    let mut files: Vec<String> = std::fs::read_dir(d.join("run"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(files, ["ckpt_00000000.bin", "model.cfg", "train.cfg", "train.log"]);
    let log = std::fs::read_to_string(d.join("run/train.log")).unwrap();
    assert!(log.contains("# variant=hvlad\n# clusters=4\n"));
    assert!(log.ends_with("step,loss,top1\n"));
}

#[test]
fn train_resume_eval_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    prepared(d);
    ok(train(d, &["--out-dir", "full", "--steps", "4", "--seed", "2"]));
    ok(train(d, &["--out-dir", "split", "--steps", "2", "--seed", "2"]));
    ok(train(d, &["--out-dir", "split", "--steps", "4", "--seed", "2", "--resume"]));
    let full = std::fs::read(d.join("full/ckpt_00000004.bin")).unwrap();
    assert_eq!(full, std::fs::read(d.join("split/ckpt_00000004.bin")).unwrap());
    let data_lines = |run: &str| -> Vec<String> {
        std::fs::read_to_string(d.join(run).join("train.log"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(String::from)
            .collect()
    };
    assert_eq!(data_lines("full"), data_lines("split"));
    assert_eq!(data_lines("full").len(), 5);

    let eval = ok(hvlad(d, &["eval", "--manifest", "m.jsonl", "--run", "full", "--cache", "cache"]));
    let again = ok(hvlad(d, &["eval", "--manifest", "m.jsonl", "--run", "full", "--cache", "cache"]));
    assert_eq!(eval.stdout, again.stdout);
    let text = String::from_utf8(eval.stdout).unwrap();
    assert!(text.contains("\"variant\": \"hvlad\"") && text.contains("\"step\": 4"));
    std::fs::write(d.join("a.json"), &text).unwrap();

    // a checkpoint from another variant does not load against this run
    ok(train(d, &["--out-dir", "b1", "--steps", "1", "--variant", "baseline1"]));
    let mismatch = hvlad(
        d,
        &["eval", "--manifest", "m.jsonl", "--run", "full", "--checkpoint", "b1/ckpt_00000001.bin", "--cache", "cache"],
    );
    assert_eq!(code(&mismatch), 5);

    ok(hvlad(d, &["eval", "--manifest", "m.jsonl", "--run", "b1", "--cache", "cache", "--out", "b.json"]));
    assert_eq!(code(&hvlad(d, &["report", "a.json", "b.json"])), 5);
    let table = ok(hvlad(d, &["report", "a.json", "b.json", "--group", "--plot", "p.svg"]));
    let table = String::from_utf8(table.stdout).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(std::fs::read_to_string(d.join("p.svg")).unwrap().contains("<svg"));
}

#[test]
fn failing_converter_keeps_partial_progress() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(hvlad(d, &["synth-corpus", "--out", "corpus", "--speakers", "2", "--utterances", "2", "--duration-s", "0.3"]));
    ok(hvlad(d, &["pair", "--corpus", "corpus", "--out", "m.jsonl", "--per-speaker", "2"]));
    let o = hvlad(d, &["convert", "--manifest", "m.jsonl", "--converter", "false {out}", "--out-dir", "conv"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("converter"));
}
