//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geneic_core::backend::{BackendBundle, DecodeMode};
use geneic_core::clustering::{
    cluster_corpus, default_k, embed_corpus, global_nearest, save_corpus_index,
    select_partner,
};
use geneic_core::fsutil::write_atomic;
use geneic_core::interpret::{interpret_prompt, render_table};
use geneic_core::metrics::{evaluate_all, Candidate, MetricReport};
use geneic_core::prompt::{compose_input, load_prompt, save_prompt, PromptState};
use geneic_core::trainer::{
    load_optimizer, run_training, save_optimizer, ResumePoint, TrainOutcome,
};
use geneic_core::transfer::{make_transferred_image, plan_transfer, score_channels};

use crate::config::RunConfig;
use crate::imageio::save_image;
use crate::manifest::{
    load_candidates, load_corpus, load_references, references_from_corpus, save_candidates, Corpus,
};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_checkpoint(path: &Path, bundle: &BackendBundle) -> Result<PromptState> {
    let prompt = load_prompt(path).with_context(|| format!("checkpoint {}", path.display()))?;
    let d_dec = bundle.dims().d_dec;
    if prompt.width() != d_dec {
        bail!(
            "checkpoint {} has width {}, backend expects {d_dec}",
            path.display(),
            prompt.width()
        );
    }
    Ok(prompt)
}

fn resolve_k(cfg: &RunConfig, flag: Option<usize>, n: usize) -> usize {
    flag.or(cfg.train.clusters)
        .unwrap_or_else(|| default_k(n))
        .clamp(1, n)
}

pub fn cmd_cluster(
    cfg: &RunConfig,
    corpus_flag: Option<&Path>,
    out_flag: Option<&Path>,
    k_flag: Option<usize>,
) -> Result<()> {
    let corpus = load_corpus(&cfg.corpus_path(corpus_flag)?)?;
    let bundle = cfg.backend.build()?;
    let out = cfg.out_dir(out_flag)?;
    ensure_dir(&out)?;

    let index = embed_corpus(&corpus.images, &bundle)?;
    let k = resolve_k(cfg, k_flag, index.len());
    let assignment = cluster_corpus(&index, k, cfg.train.seed, cfg.train.cluster_max_iter)?;

    save_corpus_index(&index, &out.join("corpus_index.json"), "embeddings.f32")?;
    let centroids: Vec<Vec<f64>> = assignment
        .centroids
        .iter_rows()
        .map(<[f64]>::to_vec)
        .collect();
    let clusters = serde_json::json!({
        "k": assignment.k,
        "labels": assignment.labels,
        "centroids": centroids,
    });
    write_atomic(
        &out.join("clusters.json"),
        serde_json::to_string_pretty(&clusters)?.as_bytes(),
    )?;
    println!(
        "clustered {} images into {} clusters -> {}",
        index.len(),
        k,
        out.display()
    );
    Ok(())
}

pub fn cmd_transfer(
    cfg: &RunConfig,
    corpus_flag: Option<&Path>,
    out_flag: Option<&Path>,
    fraction_flag: Option<f64>,
) -> Result<()> {
    let corpus = load_corpus(&cfg.corpus_path(corpus_flag)?)?;
    let bundle = cfg.backend.build()?;
    let out = cfg.out_dir(out_flag)?;
    let fraction = fraction_flag.unwrap_or(cfg.train.fraction);
    let img_dir = out.join("transferred");
    ensure_dir(&img_dir)?;

    let index = embed_corpus(&corpus.images, &bundle)?;
    let k = resolve_k(cfg, None, index.len());
    let assignment = cluster_corpus(&index, k, cfg.train.seed, cfg.train.cluster_max_iter)?;

    let mut sidecar = Vec::new();
    for i in 0..corpus.images.len() {
        let j = match select_partner(i, &assignment, &index) {
            Ok(j) => j,
            Err(geneic_core::Error::NoPartner { .. }) => global_nearest(i, &index)?,
            Err(e) => return Err(e.into()),
        };
        let f_i = bundle.model().ae_encode(&corpus.images[i])?;
        let plan = plan_transfer(&score_channels(&f_i), fraction)?;
        let moved = make_transferred_image(&corpus.images[i], &corpus.images[j], &bundle, fraction)?;
        let file = format!("{}.png", corpus.images[i].id);
        save_image(&moved, &img_dir.join(&file))?;
        sidecar.push(serde_json::json!({
            "id": corpus.images[i].id,
            "partner": corpus.images[j].id,
            "channels": plan.channels,
            "file": format!("transferred/{file}"),
        }));
    }
    write_atomic(
        &out.join("transfer_plan.json"),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    println!(
        "wrote {} transferred images (fraction {fraction}) -> {}",
        corpus.images.len(),
        img_dir.display()
    );
    Ok(())
}

fn find_resume_point(ckpt_dir: &Path) -> Result<Option<ResumePoint>> {
    let mut best: Option<(usize, PathBuf)> = None;
    if let Ok(entries) = std::fs::read_dir(ckpt_dir) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().to_string();
            if let Some(num) = name
                .strip_prefix("epoch_")
                .and_then(|s| s.strip_suffix(".gipv"))
            {
                if let Ok(epoch) = num.parse::<usize>() {
                    if best.as_ref().is_none_or(|(b, _)| epoch > *b) {
                        best = Some((epoch, entry.path()));
                    }
                }
            }
        }
    }
    let Some((epoch, prompt_path)) = best else {
        return Ok(None);
    };
    let opt_path = prompt_path.with_extension("gios");
    let prompt = load_prompt(&prompt_path)
        .with_context(|| format!("resume checkpoint {}", prompt_path.display()))?;
    let optimizer = load_optimizer(&opt_path)
        .with_context(|| format!("resume optimizer state {}", opt_path.display()))?;
    Ok(Some(ResumePoint {
        prompt,
        optimizer,
        next_epoch: epoch + 1,
    }))
}

pub fn cmd_train(
    cfg: &RunConfig,
    corpus_flag: Option<&Path>,
    out_flag: Option<&Path>,
    resume: bool,
) -> Result<()> {
    let corpus = load_corpus(&cfg.corpus_path(corpus_flag)?)?;
    let bundle = cfg.backend.build()?;
    let out = cfg.out_dir(out_flag)?;
    let ckpt_dir = out.join("checkpoints");
    ensure_dir(&ckpt_dir)?;

    let resume_point = if resume { find_resume_point(&ckpt_dir)? } else { None };
    if resume && resume_point.is_none() {
        bail!("--resume given but {} holds no epoch checkpoints", ckpt_dir.display());
    }

    let hook_dir = ckpt_dir.clone();
    let mut hook = move |epoch: usize,
                         p: &geneic_core::prompt::PromptState,
                         o: &geneic_core::trainer::OptimizerState|
          -> geneic_core::Result<()> {
        save_prompt(p, &hook_dir.join(format!("epoch_{epoch:04}.gipv")))?;
        save_optimizer(o, &hook_dir.join(format!("epoch_{epoch:04}.gios")))?;
        Ok(())
    };
    let TrainOutcome {
        prompt,
        optimizer,
        log,
    } = run_training(&corpus.images, &bundle, &cfg.train, resume_point, &mut hook)?;

    save_prompt(&prompt, &out.join("final.gipv"))?;
    save_optimizer(&optimizer, &out.join("final.gios"))?;
    write_atomic(&out.join("train_log.jsonl"), log.to_jsonl().as_bytes())?;

    if log.digest_before != log.digest_after {
        bail!(
            "backend parameters changed during training: {} -> {}",
            log.digest_before,
            log.digest_after
        );
    }
    println!(
        "trained {} prompt vectors for {} steps on {} images -> {}",
        prompt.len(),
        prompt.step(),
        log.n_images,
        out.display()
    );
    Ok(())
}

pub fn cmd_caption(
    cfg: &RunConfig,
    corpus_flag: Option<&Path>,
    checkpoint: &Path,
    out_file: Option<&Path>,
    max_len_flag: Option<usize>,
) -> Result<()> {
    let corpus = load_corpus(&cfg.corpus_path(corpus_flag)?)?;
    let bundle = cfg.backend.build()?;
    let prompt = load_checkpoint(checkpoint, &bundle)?;
    let max_len = max_len_flag.unwrap_or(cfg.train.max_len);

    let mut cands = Vec::with_capacity(corpus.images.len());
    for img in &corpus.images {
        let vis = bundle.model().encode_image(img)?;
        let input = compose_input(&vis, &prompt)?;
        let cap = bundle
            .model()
            .decode(&input, DecodeMode::Greedy, max_len, 1.0, 0)?;
        cands.push(Candidate {
            image_id: img.id.clone(),
            caption: cap.text,
        });
    }
    let out = match out_file {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = cfg.out_dir(None)?;
            ensure_dir(&dir)?;
            dir.join("candidates.jsonl")
        }
    };
    save_candidates(&cands, &out)?;
    println!("captioned {} images -> {}", cands.len(), out.display());
    Ok(())
}

fn print_report(report: &MetricReport) {
    println!("BLEU-1   {:.4}", report.bleu1);
    println!("BLEU-2   {:.4}", report.bleu2);
    println!("BLEU-3   {:.4}", report.bleu3);
    println!("BLEU-4   {:.4}", report.bleu4);
    println!("METEOR   n/a");
    println!("ROUGE-L  {:.4}", report.rouge_l);
    println!("CIDEr    {:.4}", report.cider);
    match report.clip_s {
        Some(c) => println!("CLIP-S   {c:.4}"),
        None => println!("CLIP-S   n/a (no corpus images given)"),
    }
    println!("Vocab    {}", report.vocab);
    println!("%Novel   {:.2}", report.pct_novel);
    println!("Length   {:.2}", report.mean_length);
    println!("%Unique  {:.2}", report.pct_unique);
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    candidates_path: &Path,
    references_flag: Option<&Path>,
    corpus_flag: Option<&Path>,
    out_file: Option<&Path>,
    weight_flag: Option<f64>,
) -> Result<()> {
    let cands = load_candidates(candidates_path)?;

    // the corpus is optional; without it the joint-space score is skipped
    let corpus: Option<Corpus> = match cfg.corpus_path(corpus_flag) {
        Ok(path) => Some(load_corpus(&path)?),
        Err(_) => None,
    };

    let refs = match references_flag.or(cfg.data.references.as_deref()) {
        Some(p) => load_references(p)?,
        None => corpus
            .as_ref()
            .and_then(|c| references_from_corpus(c).transpose())
            .transpose()?
            .context("no references: pass --references or put captions in the corpus manifest")?,
    };

    let weight = weight_flag.unwrap_or(cfg.metrics.clip_s_weight);
    let report = match &corpus {
        Some(corpus) => {
            let bundle = cfg.backend.build()?;
            let mut images = Vec::with_capacity(cands.len());
            for c in &cands {
                images.push(
                    corpus
                        .image(&c.image_id)
                        .with_context(|| format!("corpus has no image '{}'", c.image_id))?
                        .clone(),
                );
            }
            evaluate_all(&cands, &refs, Some((&images, &bundle, weight)))?
        }
        None => evaluate_all(&cands, &refs, None)?,
    };

    print_report(&report);
    if let Some(p) = out_file {
        write_atomic(p, serde_json::to_string_pretty(&report)?.as_bytes())?;
        println!("report -> {}", p.display());
    }
    Ok(())
}

pub fn cmd_interpret(
    cfg: &RunConfig,
    checkpoint: &Path,
    json_out: Option<&Path>,
) -> Result<()> {
    let bundle = cfg.backend.build()?;
    let prompt = load_checkpoint(checkpoint, &bundle)?;
    let rows = interpret_prompt(&prompt, &bundle)?;
    print!("{}", render_table(&rows));
    if let Some(p) = json_out {
        write_atomic(p, serde_json::to_string_pretty(&rows)?.as_bytes())?;
        println!("table -> {}", p.display());
    }
    Ok(())
}
