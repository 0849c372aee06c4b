//! End-to-end runs of the `hiervec` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hiervec_core::training::{OptimConfig, TrainConfig};
use hiervec_core::vecset::{LevelConfig, ModelConfig};

fn hiervec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiervec")).arg("--workdir").arg(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hiervec(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            heads: 2,
            mlp_ratio: 2,
            pe_width: 12,
            ..ModelConfig::new(16, vec![LevelConfig::new(16, 4, 1), LevelConfig::new(4, 8, 1)])
        },
        optim: OptimConfig { lr: 1e-3, warmup_steps: 2, decay_steps: 10, ..Default::default() },
        steps: 10,
        shapes_per_step: 2,
        queries_per_shape: 64,
        input_points: 64,
        seed: 0,
        checkpoint_every: 5,
        log_every: 0,
    }
}

/// Primitive meshes plus a small shard in a fresh directory.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["write-primitives", "--out", "meshes"]);
    ok(
        dir.path(),
        &["preprocess", "--meshes", "meshes", "--out", "data/train.shard", "--seed", "0", "--surface-points", "256", "--vol-points", "512", "--near-base-points", "256"],
    );
    fs::write(dir.path().join("train.json"), serde_json::to_string(&tiny_train_config()).unwrap()).unwrap();
    dir
}

#[test]
fn cost_report_prints_the_self_attention_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["cost-report", "--json", "cost.json"]);
    assert!(out.contains("100663296") && out.contains("35782656"), "{out}");
    assert!(out.contains("self-attention pair ratio b/a: 0.3555"), "{out}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cost.json")).unwrap()).unwrap();
    assert_eq!(json["a"]["self_attn_pairs"], 100663296u64);
}

#[test]
fn preprocessing_is_reproducible() {
    let dir = prepared();
    let first = fs::read(dir.path().join("data/train.shard")).unwrap();
    ok(
        dir.path(),
        &["preprocess", "--meshes", "meshes", "--out", "again.shard", "--seed", "0", "--surface-points", "256", "--vol-points", "512", "--near-base-points", "256"],
    );
    assert_eq!(first, fs::read(dir.path().join("again.shard")).unwrap());
    let reports = fs::read_to_string(dir.path().join("data/train.shard.report.ndjson")).unwrap();
    assert_eq!(reports.lines().count(), 8);
    assert_eq!(reports, fs::read_to_string(dir.path().join("again.shard.report.ndjson")).unwrap());
}

#[test]
fn broken_meshes_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["write-primitives", "--out", "all"]);
    fs::create_dir(dir.path().join("some")).unwrap();
    for name in ["box", "sphere"] {
        fs::copy(dir.path().join(format!("all/{name}.obj")), dir.path().join(format!("some/{name}.obj"))).unwrap();
    }
    fs::write(dir.path().join("some/broken.obj"), "v 0 0 0\nf 1 2 9\n").unwrap();
    let out = ok(dir.path(), &["preprocess", "--meshes", "some", "--out", "s.shard", "--seed", "1", "--surface-points", "128", "--vol-points", "128", "--near-base-points", "128"]);
    assert!(out.contains("2 shapes written"), "{out}");
    assert!(out.contains("1 failed"), "{out}");
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["write-primitives", "--out", "meshes"]);

    let missing_seed = hiervec(dir.path(), &["preprocess", "--meshes", "meshes", "--out", "x.shard"]);
    assert_eq!(code(&missing_seed), 1);

    fs::write(dir.path().join("bad.json"), r#"{"surface_points": "many"}"#).unwrap();
    let bad_config = hiervec(dir.path(), &["preprocess", "--meshes", "meshes", "--out", "x.shard", "--seed", "0", "--config", "bad.json"]);
    assert_eq!(code(&bad_config), 1);
    let err = String::from_utf8_lossy(&bad_config.stderr);
    assert!(err.contains("bad.json") && err.contains("surface_points"), "{err}");

    let missing_model = hiervec(dir.path(), &["encode", "--model", "nope.ckpt", "--shards", "x.shard", "--out", "z.lat"]);
    assert_eq!(code(&missing_model), 2);

    fs::write(dir.path().join("garbage.ckpt"), b"not a checkpoint").unwrap();
    let garbage = hiervec(dir.path(), &["reconstruct", "--model", "garbage.ckpt", "--latents", "garbage.ckpt", "--out-dir", "r"]);
    assert_eq!(code(&garbage), 2);
}

#[test]
fn divergent_training_exits_with_the_numerical_code() {
    let dir = prepared();
    let out = hiervec(dir.path(), &["train-ae", "--shards", "data/train.shard", "--out", "ae.ckpt", "--seed", "0", "--config", "train.json", "--lr", "1e30"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("ae.diverged").exists());
}

#[test]
fn training_is_deterministic_and_resumable() {
    let dir = prepared();
    let train = |out: &str, steps: &str| ok(dir.path(), &["train-ae", "--shards", "data/train.shard", "--out", out, "--seed", "0", "--config", "train.json", "--steps", steps]);
    train("a.ckpt", "10");
    train("b.ckpt", "10");
    let a = fs::read(dir.path().join("a.ckpt")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.ckpt")).unwrap());

    train("half.ckpt", "10");
    let resumed = ok(dir.path(), &["train-ae", "--shards", "data/train.shard", "--out", "half.ckpt", "--seed", "0", "--config", "train.json", "--resume", "half.ckpt"]);
    assert!(resumed.contains("trained steps 10..10"), "{resumed}");

    let wrong_seed = hiervec(dir.path(), &["train-ae", "--shards", "data/train.shard", "--out", "c.ckpt", "--seed", "5", "--config", "train.json", "--resume", "a.ckpt"]);
    assert_eq!(code(&wrong_seed), 1);
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = prepared();
    let p = dir.path();
    ok(p, &["train-ae", "--shards", "data/train.shard", "--out", "ae.ckpt", "--seed", "0", "--config", "train.json"]);
    let enc = ok(p, &["encode", "--model", "ae.ckpt", "--shards", "data/train.shard", "--out", "latents.bin"]);
    assert!(enc.contains("encoded 8 shapes"), "{enc}");

    ok(p, &["reconstruct", "--model", "ae.ckpt", "--latents", "latents.bin", "--out-dir", "recon", "--resolution", "16", "--coarse-resolution", "8"]);
    assert_eq!(fs::read_dir(p.join("recon")).unwrap().count(), 8);

    let eval = ok(p, &["eval", "--pred", "recon", "--meshes", "meshes", "--out", "metrics.ndjson", "--seed", "0", "--samples", "500"]);
    assert!(eval.contains("mean"), "{eval}");
    assert!(fs::read_to_string(p.join("metrics.ndjson")).unwrap().lines().count() > 0);

    let analyze = ok(
        p,
        &["analyze", "--model", "ae.ckpt", "--shards", "data/train.shard", "--meshes", "meshes", "--out", "analysis.ndjson", "--seed", "0", "--samples", "300", "--resolution", "16", "--coarse-resolution", "8", "--masks", "00,10,11"],
    );
    assert_eq!(analyze.matches("mask ").count(), 3, "{analyze}");

    let bad_mask = hiervec(p, &["analyze", "--model", "ae.ckpt", "--shards", "data/train.shard", "--meshes", "meshes", "--out", "x.ndjson", "--seed", "0", "--masks", "101"]);
    assert_eq!(code(&bad_mask), 1);

    ok(p, &["train-diff", "--latents", "latents.bin", "--out-dir", "stages", "--seed", "0", "--steps", "20"]);
    assert!(p.join("stages/level1.ckpt").exists() && p.join("stages/level2.ckpt").exists());

    ok(p, &["sample", "--stages", "stages", "--out", "samples.bin", "--seed", "3", "--count", "2", "--steps", "4"]);
    ok(p, &["sample", "--stages", "stages", "--out", "again.bin", "--seed", "3", "--count", "2", "--steps", "4"]);
    assert_eq!(fs::read(p.join("samples.bin")).unwrap(), fs::read(p.join("again.bin")).unwrap());

    let frozen = ok(p, &["sample", "--stages", "stages", "--out", "frozen.bin", "--seed", "3", "--steps", "4", "--levels-from", "latents.bin", "--from-index", "2"]);
    assert!(frozen.contains("frozen levels [2]"), "{frozen}");
    ok(p, &["reconstruct", "--model", "ae.ckpt", "--latents", "frozen.bin", "--out-dir", "gen", "--resolution", "16", "--coarse-resolution", "8"]);
    assert!(p.join("gen/sample000.obj").exists());

    let no_source = hiervec(p, &["sample", "--stages", "stages", "--out", "x.bin", "--seed", "0", "--freeze", "1"]);
    assert_eq!(code(&no_source), 1);
}
