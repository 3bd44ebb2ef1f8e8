use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charwgan")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SMALL: &[&str] = &["--embed", "8", "--hidden", "8", "--noise-dim", "8", "--max-len", "6", "--batch-size", "8"];

/// Corpus pair plus a short trained checkpoint at ck/final.ckpt.
fn trained() -> TempDir {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    assert_eq!(code(&run(p, &["synth", "--out", "train.txt", "--sentences", "500"])), 0);
    assert_eq!(code(&run(p, &["--seed", "3", "synth", "--out", "test.txt", "--sentences", "200"])), 0);
    let mut args = vec!["train", "--corpus", "train.txt", "--checkpoint-dir", "ck", "--total-iters", "12"];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(&["--disc-iters", "2", "--gen-iters", "4", "--cl", "--vl", "--th", "--iters-per-stage", "1"]);
    let o = run(p, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

#[test]
fn train_writes_final_checkpoint_and_metrics() {
    let dir = trained();
    let ck = dir.path().join("ck");
    assert!(ck.join("final.ckpt").is_file());
    let log = fs::read_to_string(ck.join("metrics.tsv")).unwrap();
    assert!(log.lines().any(|l| l.split('\t').nth(1) == Some("loss_d")));
    assert!(log.lines().any(|l| l.split('\t').nth(1) == Some("loss_g")));
}

#[test]
fn zero_iterations_checkpoints_initial_state() {
    let dir = trained();
    let mut args = vec!["train", "--corpus", "train.txt", "--checkpoint-dir", "z", "--total-iters", "0"];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&run(dir.path(), &args)), 0);
    let o = run(dir.path(), &["inspect", "z/final.ckpt"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("iterations: 0"));
}

#[test]
fn invalid_config_is_rejected_before_writing() {
    let dir = trained();
    let o = run(dir.path(), &["train", "--corpus", "train.txt", "--checkpoint-dir", "bad", "--start-len", "5", "--max-len", "3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("start_len"));
    assert!(!dir.path().join("bad").exists());
}

#[test]
fn missing_corpus_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["train", "--corpus", "absent.txt", "--checkpoint-dir", "ck"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("--corpus"));
}

#[test]
fn dry_run_prints_resolved_config() {
    let dir = trained();
    fs::write(dir.path().join("run.cfg"), "# ablation row\npreset = table2-row6\nlr = 0.001\n").unwrap();
    let o = run(dir.path(), &["train", "--config", "run.cfg", "--corpus", "train.txt", "--lr", "0.002", "--dry-run"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for kv in ["cl=true", "vl=true", "th=true", "max_len=32", "lr=0.002", "gen_iters=50", "disc_iters=10", "embed=512"] {
        assert!(out.lines().any(|l| l == kv), "missing {kv} in\n{out}");
    }
    assert!(!dir.path().join("checkpoints").exists());
}

#[test]
fn unknown_preset_is_a_validation_error() {
    let dir = trained();
    let o = run(dir.path(), &["train", "--corpus", "train.txt", "--preset", "table2-row9", "--dry-run"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn resume_continues_counters() {
    let dir = trained();
    let o = run(dir.path(), &["train", "--resume", "ck/final.ckpt", "--total-iters", "18"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(dir.path(), &["inspect", "ck/final.ckpt"]);
    assert!(stdout(&o).contains("iterations: 18 (6 critic, 12 generator, 3 cycles)"), "{}", stdout(&o));
}

#[test]
fn sample_is_deterministic_and_may_exceed_training_length() {
    let dir = trained();
    let args = ["--seed", "7", "sample", "--checkpoint", "ck/final.ckpt", "--num", "4", "--len", "20"];
    let a = run(dir.path(), &args);
    let b = run(dir.path(), &args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let lines: Vec<_> = stdout(&a).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 4);
    assert!(lines.iter().all(|l| l.chars().count() == 20));
}

#[test]
fn sample_zero_prints_nothing() {
    let dir = trained();
    let o = run(dir.path(), &["sample", "--checkpoint", "ck/final.ckpt", "--num", "0"]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
}

#[test]
fn eval_of_test_lines_scores_full_overlap() {
    let dir = trained();
    let o = run(dir.path(), &["eval", "--samples", "test.txt", "--test-corpus", "test.txt"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for n in 1..=4 {
        assert!(out.lines().any(|l| l == format!("in_test_{n}=100.0000")), "{out}");
    }
}

#[test]
fn eval_of_checkpoint_reports_all_orders() {
    let dir = trained();
    let o = run(dir.path(), &["eval", "--checkpoint", "ck/final.ckpt", "--test-corpus", "test.txt", "--num", "16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("%-IN-TEST-n"));
    assert!(out.lines().any(|l| l == "num_samples=16"));
}

#[test]
fn eval_without_test_corpus_names_the_flag() {
    let dir = trained();
    let o = run(dir.path(), &["eval", "--checkpoint", "ck/final.ckpt"]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("--test-corpus"));
}

#[test]
fn inspect_lists_tensors_and_state() {
    let dir = trained();
    let o = run(dir.path(), &["inspect", "ck/final.ckpt"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("version 1"));
    assert!(out.contains("gen.gru.w_z"));
    assert!(out.contains("disc.score_proj"));
    assert!(out.contains("schedule: cap"));
    assert!(out.contains("iterations: 12 (4 critic, 8 generator, 2 cycles)"), "{out}");
}

#[test]
fn inspect_default_model_has_512_dims() {
    let dir = trained();
    let o = run(dir.path(), &["train", "--corpus", "train.txt", "--checkpoint-dir", "big", "--total-iters", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&run(dir.path(), &["inspect", "big/final.ckpt"]));
    assert!(out.lines().any(|l| l.contains("gen.gru.w_z") && l.contains("[512, 512]")), "{out}");
}

#[test]
fn truncated_checkpoint_reports_corruption() {
    let dir = trained();
    let bytes = fs::read(dir.path().join("ck/final.ckpt")).unwrap();
    fs::write(dir.path().join("cut.ckpt"), &bytes[..bytes.len() / 2]).unwrap();
    let o = run(dir.path(), &["inspect", "cut.ckpt"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("corrupt"));
}

#[test]
fn gradcheck_passes_in_double_precision() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), &["--f64", "gradcheck", "--instances", "2"]);
    assert_eq!(code(&o), 0, "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("ok")));
}

#[test]
fn bad_flags_exit_with_validation_code() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(dir.path(), &["train", "--bogus"])), 1);
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
}
