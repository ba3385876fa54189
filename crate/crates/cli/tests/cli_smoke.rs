//! End-to-end exercises of the `cyclecast` binary on a small workload.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cyclecast"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn");
    assert!(
        out.status.success(),
        "cyclecast {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        r#"
seed = 7

[workload]
kind = "mixed"
instructions = 9000
footprint_bytes = 65536

[window]
n = 48
r = 24
stride = 24

[model]
proj_dim = 24
hidden = 24
layers = 1
cls_hidden = 8
dropout_p = 0.0

[train]
batch_windows = 32
max_epochs = 2
patience = 2

[deploy]
epoch_len = 3000
"#,
    )
    .unwrap();
    path
}

#[test]
fn pipeline_gen_simulate_train_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let cfg = write_small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();

    run_ok(&["gen", "--config", cfg, "--out", out]);
    let trace = tmp.path().join("trace.nstr");
    assert!(trace.exists());
    // 9000 records, 32-byte header + 32-byte records.
    assert_eq!(std::fs::metadata(&trace).unwrap().len(), 32 + 32 * 9000);

    run_ok(&["simulate", "--config", cfg, "--out", out, "--trace", trace.to_str().unwrap()]);
    let labeled = tmp.path().join("labeled_8w.nstr");
    assert!(labeled.exists());

    run_ok(&["train", "--config", cfg, "--out", out, "--trace", labeled.to_str().unwrap()]);
    let ckpt = tmp.path().join("model.nsck");
    assert!(ckpt.exists());
    let history = std::fs::read_to_string(tmp.path().join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_loss,"));
    assert!(history.lines().count() >= 2);

    run_ok(&[
        "eval",
        "--config",
        cfg,
        "--out",
        out,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--trace",
        labeled.to_str().unwrap(),
    ]);
    let metrics = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("label,mae,rmse,"));
    let hist = std::fs::read_to_string(tmp.path().join("gt_histogram.csv")).unwrap();
    // Header + 12 bins.
    assert_eq!(hist.lines().count(), 13);

    // Outputs are overwrite-protected without --force.
    let out2 = bin()
        .args(["eval", "--config", cfg, "--out", out])
        .args(["--checkpoint", ckpt.to_str().unwrap(), "--trace", labeled.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out2.status.code(), Some(2));
    run_ok(&[
        "eval",
        "--config",
        cfg,
        "--out",
        out,
        "--force",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--trace",
        labeled.to_str().unwrap(),
    ]);
}

#[test]
fn sign_prints_one_line_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let cfg = write_small_config(tmp.path());
    run_ok(&["gen", "--config", cfg.to_str().unwrap(), "--out", out]);
    let trace = tmp.path().join("trace.nstr");
    // 9000 instructions at epoch_len 3000 -> exactly 3 epochs.
    let output = run_ok(&["sign", "--trace", trace.to_str().unwrap()]);
    let text = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in &lines {
        assert_eq!(line.len(), 64);
        assert!(line.chars().all(|c| c.is_ascii_hexdigit()));
    }
    // Overriding the epoch length re-slices the trace.
    let output = run_ok(&["sign", "--trace", trace.to_str().unwrap(), "--epoch-len", "4500"]);
    assert_eq!(String::from_utf8(output.stdout).unwrap().lines().count(), 2);
}

#[test]
fn plan_gpu_nominal_matches_walkthrough() {
    let tmp = tempfile::tempdir().unwrap();
    let output = run_ok(&[
        "plan",
        "--preset",
        "gpu-4090-nominal",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    let text = String::from_utf8(output.stdout).unwrap();
    // 100k instructions at 4 MIPS -> 0.025 s inference, 25 s period, 75e9
    // instructions between samples at 3000 MIPS host.
    assert!(text.contains("seconds_per_epoch_inference,1/40,0.025"), "{text}");
    assert!(text.contains("epoch_period_seconds,25/1,25.0"), "{text}");
    assert!(text.contains("instructions_between_samples,75000000000/1,"), "{text}");
    assert!(tmp.path().join("plan.csv").exists());
}

#[test]
fn bad_inputs_map_to_documented_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();

    // Unknown config key -> 2.
    let bad_cfg = tmp.path().join("bad.toml");
    std::fs::write(&bad_cfg, "nonsense_key = 1\n").unwrap();
    let o = bin().args(["gen", "--config", bad_cfg.to_str().unwrap(), "--out", out]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    // Unknown preset -> 2.
    let o = bin().args(["plan", "--preset", "nope", "--out", out]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    // Missing trace file -> 3.
    let o = bin().args(["sign", "--trace", "/nonexistent.nstr"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));

    // Garbage trace -> 3.
    let junk = tmp.path().join("junk.nstr");
    std::fs::write(&junk, b"not a trace").unwrap();
    let o = bin().args(["sign", "--trace", junk.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn gen_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    for sub in ["a", "b"] {
        let dir = tmp.path().join(sub);
        run_ok(&["gen", "--config", cfg, "--out", dir.to_str().unwrap()]);
    }
    let a = std::fs::read(tmp.path().join("a/trace.nstr")).unwrap();
    let b = std::fs::read(tmp.path().join("b/trace.nstr")).unwrap();
    assert_eq!(a, b);

    let dir = tmp.path().join("c");
    run_ok(&["gen", "--config", cfg, "--seed", "8", "--out", dir.to_str().unwrap()]);
    let c = std::fs::read(dir.join("trace.nstr")).unwrap();
    assert_ne!(a, c);
}
