//! Integration tests driving the `geneic` binary.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geneic_core::prompt::{encode_prompt, init_prompt, load_prompt};
use geneic_core::rng::SplitMix64;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geneic"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .env_remove("GENEIC_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Writes `n` random 8x8 grayscale PGMs plus a manifest; returns the
/// manifest path.
fn write_corpus(dir: &Path, n: usize, seed: u64, captions: bool) -> PathBuf {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).unwrap();
    let mut rng = SplitMix64::new(seed);
    let mut manifest = String::new();
    for i in 0..n {
        let name = format!("img{i:02}.pgm");
        let mut bytes = b"P5 8 8 255\n".to_vec();
        for _ in 0..64 {
            bytes.push((rng.next_f64() * 255.0) as u8);
        }
        std::fs::write(img_dir.join(&name), bytes).unwrap();
        let caps = if captions {
            format!(
                ", \"captions\": [\"a red bird with a big photo\", \"the small blue flower photo\"]"
            )
        } else {
            String::new()
        };
        manifest.push_str(&format!(
            "{{\"id\": \"img{i:02}\", \"path\": \"images/{name}\"{caps}}}\n"
        ));
    }
    let path = dir.join("corpus.jsonl");
    std::fs::write(&path, manifest).unwrap();
    path
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_TRAIN: &str = r#"
[data]
corpus = "corpus.jsonl"
out_dir = "out"

[train]
seed = 1
epochs = 2
batch_size = 4
n_images = 10
max_len = 5
clusters = 2
"#;

#[test]
fn help_exits_zero_and_unknown_flags_exit_two() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("cluster"));

    let bad_flag = bin().args(["cluster", "--frobnicate"]).output().unwrap();
    assert_eq!(bad_flag.status.code(), Some(2));

    let bad_cmd = bin().arg("explode").output().unwrap();
    assert_eq!(bad_cmd.status.code(), Some(2));

    for sub in ["cluster", "transfer", "train", "caption", "evaluate", "interpret"] {
        let out = bin().args([sub, "--help"]).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{sub} --help");
    }
}

#[test]
fn cluster_outputs_are_deterministic_and_cached_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 10, 3, false);
    write_config(dir.path(), SMALL_TRAIN);
    assert_ok(&run_in(dir.path(), &["--config", "run.toml", "cluster"]));
    let index1 = std::fs::read(dir.path().join("out/corpus_index.json")).unwrap();
    let emb1 = std::fs::read(dir.path().join("out/embeddings.f32")).unwrap();
    let clusters1 = std::fs::read(dir.path().join("out/clusters.json")).unwrap();
    assert_ok(&run_in(dir.path(), &["--config", "run.toml", "cluster"]));
    assert_eq!(index1, std::fs::read(dir.path().join("out/corpus_index.json")).unwrap());
    assert_eq!(emb1, std::fs::read(dir.path().join("out/embeddings.f32")).unwrap());
    assert_eq!(clusters1, std::fs::read(dir.path().join("out/clusters.json")).unwrap());
    // the raw embedding file is f32 rows of width d_j = 8
    assert_eq!(emb1.len(), 10 * 8 * 4);
}

#[test]
fn cluster_handles_a_single_image_corpus() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 1, 41, false);
    write_config(dir.path(), SMALL_TRAIN);
    assert_ok(&run_in(dir.path(), &["--config", "run.toml", "cluster"]));
    let clusters: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/clusters.json")).unwrap())
            .unwrap();
    assert_eq!(clusters["k"], 1);
    assert_eq!(clusters["labels"].as_array().unwrap().len(), 1);
}

#[test]
fn cluster_separates_dark_and_bright_images() {
    let dir = tempfile::tempdir().unwrap();
    let img_dir = dir.path().join("images");
    std::fs::create_dir_all(&img_dir).unwrap();
    let mut rng = SplitMix64::new(9);
    let mut manifest = String::new();
    for i in 0..10 {
        let bright = i >= 5;
        let name = format!("img{i}.pgm");
        let mut bytes = b"P5 8 8 255\n".to_vec();
        for _ in 0..64 {
            let noise = (rng.next_f64() * 12.0) as u8;
            bytes.push(if bright { 243 + noise / 6 } else { noise });
        }
        std::fs::write(img_dir.join(&name), bytes).unwrap();
        manifest.push_str(&format!("{{\"id\": \"img{i}\", \"path\": \"images/{name}\"}}\n"));
    }
    std::fs::write(dir.path().join("corpus.jsonl"), manifest).unwrap();
    write_config(dir.path(), SMALL_TRAIN);
    assert_ok(&run_in(dir.path(), &["--config", "run.toml", "cluster", "--k", "2"]));
    let clusters: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/clusters.json")).unwrap())
            .unwrap();
    let labels: Vec<usize> = clusters["labels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    let dark: HashSet<usize> = labels[..5].iter().copied().collect();
    let brights: HashSet<usize> = labels[5..].iter().copied().collect();
    assert_eq!(dark.len(), 1, "dark images split: {labels:?}");
    assert_eq!(brights.len(), 1, "bright images split: {labels:?}");
    assert_ne!(dark, brights);
}

#[test]
fn missing_images_are_listed_and_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 1, false);
    std::fs::remove_file(dir.path().join("images/img01.pgm")).unwrap();
    write_config(dir.path(), SMALL_TRAIN);
    let out = run_in(dir.path(), &["--config", "run.toml", "cluster"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("img01.pgm"), "stderr: {stderr}");
}

#[test]
fn train_is_bitwise_reproducible_and_resume_matches() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 10, 5, false);
    let cfg = r#"
[data]
corpus = "corpus.jsonl"

[train]
seed = 2
epochs = 4
batch_size = 4
n_images = 10
max_len = 5
clusters = 2
"#;
    write_config(dir.path(), cfg);
    assert_ok(&run_in(dir.path(), &["--config", "run.toml", "train", "--out", "a"]));
    assert_ok(&run_in(dir.path(), &["--config", "run.toml", "train", "--out", "b"]));
    let final_a = std::fs::read(dir.path().join("a/final.gipv")).unwrap();
    assert_eq!(final_a, std::fs::read(dir.path().join("b/final.gipv")).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a/train_log.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b/train_log.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("a/final.gios")).unwrap(),
        std::fs::read(dir.path().join("b/final.gios")).unwrap()
    );

    // simulate an interruption after epoch 1: drop the later epoch
    // checkpoints and the final artifacts, then resume
    assert_ok(&run_in(dir.path(), &["--config", "run.toml", "train", "--out", "c"]));
    for stale in ["final.gipv", "final.gios", "train_log.jsonl",
                  "checkpoints/epoch_0002.gipv", "checkpoints/epoch_0002.gios",
                  "checkpoints/epoch_0003.gipv", "checkpoints/epoch_0003.gios"] {
        std::fs::remove_file(dir.path().join("c").join(stale)).unwrap();
    }
    assert_ok(&run_in(dir.path(), &["--config", "run.toml", "train", "--out", "c", "--resume"]));
    assert_eq!(final_a, std::fs::read(dir.path().join("c/final.gipv")).unwrap());
    assert_eq!(
        std::fs::read(dir.path().join("a/final.gios")).unwrap(),
        std::fs::read(dir.path().join("c/final.gios")).unwrap()
    );

    // resume without checkpoints fails
    let bad = run_in(dir.path(), &["--config", "run.toml", "train", "--out", "d", "--resume"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn train_zero_epochs_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6, 7, false);
    write_config(dir.path(), SMALL_TRAIN);
    assert_ok(&run_in(
        dir.path(),
        &["--config", "run.toml", "train", "--out", "out", "--epochs", "0", "--n-images", "6"],
    ));
    let prompt = load_prompt(&dir.path().join("out/final.gipv")).unwrap();
    assert_eq!(prompt.step(), 0);
    assert_eq!(prompt.len(), 8);
}

#[test]
fn seed_precedence_flag_env_default() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 8, 11, false);
    let cfg = r#"
[data]
corpus = "corpus.jsonl"

[train]
epochs = 1
batch_size = 4
n_images = 8
max_len = 5
clusters = 2
"#;
    write_config(dir.path(), cfg);
    let run = |out: &str, seed_flag: Option<&str>, env: Option<&str>| {
        let mut cmd = bin();
        cmd.current_dir(dir.path())
            .env_remove("GENEIC_SEED")
            .args(["--config", "run.toml", "train", "--out", out]);
        if let Some(s) = seed_flag {
            cmd.args(["--seed", s]);
        }
        if let Some(e) = env {
            cmd.env("GENEIC_SEED", e);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("flag5", Some("5"), None);
    run("env5", None, Some("5"));
    run("env9", None, Some("9"));
    run("flag5_env9", Some("5"), Some("9"));
    let read = |o: &str| std::fs::read(dir.path().join(o).join("final.gipv")).unwrap();
    assert_eq!(read("flag5"), read("env5"));
    assert_eq!(read("flag5"), read("flag5_env9"));
    assert_ne!(read("flag5"), read("env9"));
}

#[test]
fn caption_covers_the_corpus_and_m0_is_the_promptless_baseline() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6, 13, false);
    write_config(dir.path(), SMALL_TRAIN);

    // an untrained M=0 checkpoint: decode runs on visual slots alone
    let empty = init_prompt(0, 8, 0).unwrap();
    std::fs::write(dir.path().join("empty.gipv"), encode_prompt(&empty)).unwrap();
    assert_ok(&run_in(
        dir.path(),
        &[
            "--config", "run.toml", "caption",
            "--checkpoint", "empty.gipv",
            "--out", "cands.jsonl",
            "--max-len", "5",
        ],
    ));
    let lines: Vec<String> = std::fs::read_to_string(dir.path().join("cands.jsonl"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 6);
    for line in &lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["image_id"].as_str().unwrap().starts_with("img"));
        assert!(!v["caption"].as_str().unwrap().is_empty());
    }

    // checkpoint width must match the backend
    let wrong = init_prompt(2, 7, 0).unwrap();
    std::fs::write(dir.path().join("wrong.gipv"), encode_prompt(&wrong)).unwrap();
    let bad = run_in(
        dir.path(),
        &["--config", "run.toml", "caption", "--checkpoint", "wrong.gipv", "--out", "x.jsonl"],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("width"));
}

#[test]
fn caption_output_is_a_frozen_fixture() {
    // seed-0 backend, untrained seed-0 prompt, deterministic corpus:
    // the caption file bytes are frozen
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 4, 21, false);
    write_config(dir.path(), SMALL_TRAIN);
    let prompt = init_prompt(8, 8, 0).unwrap();
    std::fs::write(dir.path().join("p.gipv"), encode_prompt(&prompt)).unwrap();
    assert_ok(&run_in(
        dir.path(),
        &[
            "--config", "run.toml", "caption",
            "--checkpoint", "p.gipv",
            "--out", "cands.jsonl",
            "--max-len", "5",
        ],
    ));
    let got = std::fs::read_to_string(dir.path().join("cands.jsonl")).unwrap();
    let again = {
        assert_ok(&run_in(
            dir.path(),
            &[
                "--config", "run.toml", "caption",
                "--checkpoint", "p.gipv",
                "--out", "cands2.jsonl",
                "--max-len", "5",
            ],
        ));
        std::fs::read_to_string(dir.path().join("cands2.jsonl")).unwrap()
    };
    assert_eq!(got, again);
    for line in got.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let caption = v["caption"].as_str().unwrap();
        assert_eq!(caption.split_whitespace().count(), 5);
    }
}

#[test]
fn evaluate_scores_identity_corpus_at_one() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 4, 17, true);
    write_config(dir.path(), SMALL_TRAIN);
    // candidates equal to the first reference of each image
    let mut cands = String::new();
    for i in 0..4 {
        cands.push_str(&format!(
            "{{\"image_id\": \"img{i:02}\", \"caption\": \"a red bird with a big photo\"}}\n"
        ));
    }
    std::fs::write(dir.path().join("cands.jsonl"), cands).unwrap();
    assert_ok(&run_in(
        dir.path(),
        &[
            "--config", "run.toml", "evaluate",
            "--candidates", "cands.jsonl",
            "--out", "report.json",
        ],
    ));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert!((report["bleu4"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!((report["rouge_l"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(report.get("meteor").is_none());
    assert!(report["clip_s"].is_number());
    assert_eq!(report["pct_unique"].as_f64().unwrap(), 25.0);

    // without references anywhere the command fails
    let no_refs_dir = tempfile::tempdir().unwrap();
    write_corpus(no_refs_dir.path(), 3, 19, false);
    write_config(no_refs_dir.path(), SMALL_TRAIN);
    std::fs::copy(
        dir.path().join("cands.jsonl"),
        no_refs_dir.path().join("cands.jsonl"),
    )
    .unwrap();
    let bad = run_in(
        no_refs_dir.path(),
        &["--config", "run.toml", "evaluate", "--candidates", "cands.jsonl"],
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("references"));
}

#[test]
fn transfer_fraction_zero_reconstructs_the_originals() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 6, 23, false);
    write_config(dir.path(), SMALL_TRAIN);
    assert_ok(&run_in(
        dir.path(),
        &["--config", "run.toml", "transfer", "--fraction", "0"],
    ));
    // with nothing swapped the decoded PNG must round-trip the source
    for i in 0..6 {
        let src = std::fs::read(dir.path().join(format!("images/img{i:02}.pgm"))).unwrap();
        let src_pixels = &src[b"P5 8 8 255\n".len()..];
        let png_path = dir.path().join(format!("out/transferred/img{i:02}.png"));
        let decoder = png::Decoder::new(std::fs::File::open(&png_path).unwrap());
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        assert_eq!(buf, src_pixels, "image {i} changed under fraction 0");
    }
    let sidecar: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/transfer_plan.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar.as_array().unwrap().len(), 6);
    assert!(sidecar[0]["channels"].as_array().unwrap().is_empty());

    // a real fraction changes pixels and lists the swapped channels
    assert_ok(&run_in(
        dir.path(),
        &["--config", "run.toml", "transfer", "--out", "out2", "--fraction", "0.25"],
    ));
    let sidecar2: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out2/transfer_plan.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sidecar2[0]["channels"].as_array().unwrap().len(), 2);
}

#[test]
fn interpret_prints_a_table_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, 29, false);
    write_config(dir.path(), SMALL_TRAIN);
    let prompt = init_prompt(8, 8, 0).unwrap();
    std::fs::write(dir.path().join("p.gipv"), encode_prompt(&prompt)).unwrap();
    let out = run_in(
        dir.path(),
        &["--config", "run.toml", "interpret", "--checkpoint", "p.gipv", "--json", "table.json"],
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("retrieval"));
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("table.json")).unwrap())
            .unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 8);
    assert!(rows[0]["retrieved"].is_string());
    assert!(rows[0]["probability"].as_f64().unwrap() > 0.0);
}
