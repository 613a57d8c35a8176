use std::path::Path;
use std::process::{Command, Output};

use seqmix_cli::{blob_hash, RunManifest};

fn seqmix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqmix"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = seqmix(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: &str = "# small enough for a test
warmup_steps = 20
inner_steps = 5
iterations = 2
batch_size = 8
d_model = 16
d_ff = 32
n_heads = 2
lr = 0.003
";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    ok(
        dir.path(),
        &["gen-corpus", "--task", "copy", "--n", "80", "--seed", "2", "--out", "train.jsonl", "--holdout", "16", "--holdout-out", "held.jsonl"],
    );
    dir
}

fn lines(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_then_eval_smoke_path() {
    let dir = setup();
    let d = dir.path();
    assert_eq!(lines(&d.join("train.jsonl")).len(), 64);
    assert_eq!(lines(&d.join("held.jsonl")).len(), 16);
    ok(d, &["train", "--mode", "sft_only", "--config", "tiny.cfg", "--data", "train.jsonl", "--out", "run"]);
    let metrics = std::fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    // header, 20 warmup steps, 4 template-phase steps
    assert_eq!(metrics.lines().count(), 25);
    let stdout = ok(d, &["eval", "--checkpoint", "run/sft.ckpt", "--data", "held.jsonl", "--out", "eval.jsonl"]);
    assert!(stdout.starts_with("sft: exact match"));
    let rows = lines(&d.join("eval.jsonl"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["method"], "sft");
    assert_eq!(rows[0]["exact_match_per_repeat"].as_array().unwrap().len(), 3);

    let m = RunManifest::read(&d.join("run/manifest.json")).unwrap();
    assert!(m.verify().is_empty());
    assert!(m.outputs.iter().any(|a| a.path.ends_with("sft.ckpt")));
    assert!(m.config.as_deref().unwrap().contains("warmup_steps = 20"));
    let ckpt = std::fs::read(d.join("run/sft.ckpt")).unwrap();
    assert!(m.outputs.iter().any(|a| a.hash == blob_hash(&ckpt)));
    assert!(RunManifest::read(&d.join("eval.jsonl.manifest.json")).unwrap().verify().is_empty());
    ok(d, &["verify", "run/manifest.json"]);
}

#[test]
fn unmixed_build_reproduces_the_references() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--mode", "sft_only", "--config", "tiny.cfg", "--data", "train.jsonl", "--out", "run"]);
    let before = std::fs::read(d.join("held.jsonl")).unwrap();
    ok(
        d,
        &["build", "ds", "--checkpoint", "run/sft.ckpt", "--data", "held.jsonl", "--config", "tiny.cfg", "--set", "beta=0", "--out", "ds.jsonl"],
    );
    for r in lines(&d.join("ds.jsonl")) {
        assert_eq!(r["mixed_ids"], r["continuation_ids"]);
    }
    ok(
        d,
        &["build", "dr", "--checkpoint", "run/sft.ckpt", "--data", "held.jsonl", "--config", "tiny.cfg", "--out", "dr.jsonl"],
    );
    assert_eq!(lines(&d.join("dr.jsonl")).len(), 16);
    // inputs are never touched
    assert_eq!(std::fs::read(d.join("held.jsonl")).unwrap(), before);
}

#[test]
fn greedy_sampling_is_repeatable() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--mode", "sft_only", "--config", "tiny.cfg", "--data", "train.jsonl", "--out", "run"]);
    let args = ["sample", "--checkpoint", "run/sft.ckpt", "--prompt", "abc<sep>", "--greedy"];
    assert_eq!(ok(d, &args), ok(d, &args));
    let sampled = ["sample", "--checkpoint", "run/sft.ckpt", "--prompt", "abc<sep>", "--seed", "4", "--manifest", "s.json"];
    assert_eq!(ok(d, &sampled), ok(d, &sampled));
    assert!(d.join("s.json").exists());
}

#[test]
fn flags_override_the_file_which_overrides_defaults() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--config", "tiny.cfg", "--data", "train.jsonl", "--out", "a", "--set", "lr=0.005", "--seed", "9"]);
    let snap = std::fs::read_to_string(d.join("a/config.txt")).unwrap();
    assert!(snap.contains("lr = 0.005\n"));
    assert!(snap.contains("seed = 9\n"));
    assert!(snap.contains("warmup_steps = 20\n"));
    // untouched keys keep their defaults
    assert!(snap.contains("beta = 0.2\n"));
    ok(d, &["train", "--config", "tiny.cfg", "--data", "train.jsonl", "--out", "b"]);
    assert!(std::fs::read_to_string(d.join("b/config.txt")).unwrap().contains("lr = 0.003\n"));
}

#[test]
fn same_seed_same_bytes_for_any_worker_count() {
    let dir = setup();
    let d = dir.path();
    for (out, workers) in [("w1", "1"), ("w3", "3")] {
        ok(
            d,
            &["train", "--mode", "bash", "--config", "tiny.cfg", "--data", "train.jsonl", "--out", out, "--workers", workers],
        );
    }
    for f in ["sft.ckpt", "bash.ckpt", "ds_iter0.jsonl", "ds_iter1.jsonl"] {
        assert_eq!(
            std::fs::read(d.join("w1").join(f)).unwrap(),
            std::fs::read(d.join("w3").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn validation_errors_exit_2_with_every_bad_key() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "lr = fast\nbatch_size = 0\nwat = 1\n").unwrap();
    let out = seqmix(d, &["train", "--config", "bad.cfg", "--data", "train.jsonl", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[validation]:"));
    for key in ["lr", "batch_size", "wat"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }

    let out = seqmix(d, &["train", "--data", "train.jsonl", "--out", "x", "--set", "beta=2", "--set", "batch_size=0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("beta") && err.contains("batch_size"), "{err}");

    let out = seqmix(d, &["eval", "--checkpoint", "missing.ckpt", "--data", "held.jsonl", "--out", "e.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let out = seqmix(d, &["gen-corpus", "--task", "multiply", "--n", "3", "--out", "m.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_3() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--mode", "sft_only", "--config", "tiny.cfg", "--data", "train.jsonl", "--out", "run"]);
    let out = seqmix(d, &["eval", "--checkpoint", "run/sft.ckpt", "--data", "held.jsonl", "--out", "no/such/dir/e.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[runtime]:"));
    std::fs::write(d.join("run/metrics.csv"), "tampered").unwrap();
    assert_eq!(seqmix(d, &["verify", "run/manifest.json"]).status.code(), Some(3));
}

#[test]
fn distances_and_bench_write_their_reports() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["train", "--mode", "sft_only", "--config", "tiny.cfg", "--data", "train.jsonl", "--out", "run"]);
    ok(
        d,
        &["gen-corpus", "--task", "copy", "--n", "2", "--seed", "5", "--out", "probes.jsonl"],
    );
    ok(d, &["distances", "--checkpoint", "run/sft.ckpt", "--prompts", "probes.jsonl", "--n", "8", "--out", "dist"]);
    let csv = std::fs::read_to_string(d.join("dist/sft_quartiles.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(lines(&d.join("dist/sft_distances.jsonl")).len(), 2);

    ok(
        d,
        &["bench", "--checkpoint", "run/sft.ckpt", "--data", "train.jsonl", "--config", "tiny.cfg", "--batches", "3", "--out", "bench.json"],
    );
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("bench.json")).unwrap()).unwrap();
    assert_eq!(report["scs_step_ms"].as_array().unwrap().len(), 3);
}
