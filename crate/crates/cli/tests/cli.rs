use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn sunsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sunsplat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const GEN: &str = r#"{
  "width": 32, "height": 32, "fx": 40.0, "fy": 40.0, "eval_frames": 3,
  "trajectory": { "frames": 40, "loops": 0.5, "tumble_rate_deg": 0.2 }
}"#;

const RUN: &str = r#"{ "config_id": "d", "window": 4, "n_init": 120, "max_rounds": 2 }"#;

fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(fs::read(&path).unwrap());
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.insert(rel, format!("{digest:x}"));
            }
        }
    }
    out
}

fn generate(dir: &Path, name: &str, seed: &str) -> std::path::PathBuf {
    let cfg = dir.join("gen.json");
    fs::write(&cfg, GEN).unwrap();
    let out = dir.join(name);
    let o = sunsplat(&["generate", "--config", p(&cfg), "--out", p(&out), "--seed", seed]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let o = sunsplat(&[
        "train",
        "--dataset",
        p(tmp.path()),
        "--config",
        p(&missing),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn unknown_configuration_id_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{ "config_id": "e" }"#).unwrap();
    let o = sunsplat(&[
        "train",
        "--dataset",
        p(tmp.path()),
        "--config",
        p(&cfg),
        "--out",
        p(&tmp.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config_id"));
}

#[test]
fn bad_flags_and_splits_exit_2() {
    assert_eq!(sunsplat(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(sunsplat(&[]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let o = sunsplat(&[
        "eval",
        "--checkpoint",
        p(&tmp.path().join("c.bin")),
        "--dataset",
        p(tmp.path()),
        "--split",
        "everything",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_is_deterministic_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let a = hash_tree(&generate(tmp.path(), "a", "3"));
    let b = hash_tree(&generate(tmp.path(), "b", "3"));
    let c = hash_tree(&generate(tmp.path(), "c", "4"));
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn train_render_eval_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = generate(tmp.path(), "ds", "1");
    let run_cfg = tmp.path().join("run.json");
    fs::write(&run_cfg, RUN).unwrap();

    let mut ckpts = Vec::new();
    for name in ["r1", "r2"] {
        let out = tmp.path().join(name);
        let o = sunsplat(&["--threads", "1", "train", "--dataset", p(&ds), "--config", p(&run_cfg), "--out", p(&out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        ckpts.push(fs::read(out.join("checkpoint.bin")).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1], "same seed and config give identical checkpoints");

    let ckpt = tmp.path().join("r1/checkpoint.bin");
    let renders = tmp.path().join("renders");
    let o = sunsplat(&[
        "render",
        "--checkpoint",
        p(&ckpt),
        "--dataset",
        p(&ds),
        "--frames",
        "0,1",
        "--compare",
        "--out",
        p(&renders),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(renders.join("render_000001.png").exists());
    assert!(renders.join("compare_000001.png").exists());

    let report = tmp.path().join("eval.json");
    let o = sunsplat(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--dataset",
        p(&ds),
        "--split",
        "random-pose",
        "--out",
        p(&report),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("psnr_masked") && table.contains("mean"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["frames"].as_array().unwrap().len(), 3);
}
