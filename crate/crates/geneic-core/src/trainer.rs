//! The unsupervised training loop.
//!
//! Per pair (original, transferred): decode greedy and sampled captions
//! for both images with the current prompt, score attribute and
//! semantic rewards in the joint space, form self-critical advantages
//! with the greedy rewards as baselines, and accumulate advantage-
//! weighted log-probability gradients into the prompt block. Only the
//! prompt changes; the backend digest is identical before and after a
//! run.
//!
//! Every stochastic event draws from a seed derived functionally from
//! (master seed, purpose, epoch, index), so runs replay bitwise and a
//! resumed run continues exactly where the interrupted one left off.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendBundle, DecodeMode, ImageSample, JointEmbedding};
use crate::clustering::{build_pair_batches, cluster_corpus, default_k, embed_corpus};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::losses::{pair_advantage, AdvantageBatch, LossReport, PairRewards, DELTA_EPSILON};
use crate::math::Matrix;
use crate::prompt::{compose_input, init_prompt_with_std, PromptState};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::transfer::make_transferred_image;
use crate::{Mat, Scalar};

pub const OPT_MAGIC: &[u8; 4] = b"GIOS";
pub const OPT_VERSION: u32 = 1;

// Seed-derivation domains.
const DOM_INIT: u64 = 0x01;
const DOM_CLUSTER: u64 = 0x02;
const DOM_PAIRS: u64 = 0x03;
const DOM_SCST: u64 = 0x04;

/// Which sampled captions the advantage-weighted gradient flows
/// through: the original image's only, or both images of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    OriginalOnly,
    Both,
}

/// Training hyperparameters. The defaults are the reference recipe:
/// 8 prompt vectors, up to 1000 images, β = 0.5, 30 epochs of batch 10
/// with AdamW under whole-run cosine annealing from 5e-4, prompt init
/// std 0.02.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of learnable prompt vectors (M).
    pub prompt_len: usize,
    /// Cap on the number of corpus images used for training (N).
    pub n_images: usize,
    pub beta: Scalar,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: Scalar,
    pub lr_min: Scalar,
    pub weight_decay: Scalar,
    pub adam_beta1: Scalar,
    pub adam_beta2: Scalar,
    pub adam_eps: Scalar,
    pub temperature: Scalar,
    pub max_len: usize,
    /// Fraction of latent channels swapped by attribute transfer.
    pub fraction: Scalar,
    pub grad_scope: GradScope,
    pub seed: u64,
    pub init_std: Scalar,
    /// Cluster count; None picks max(2, N/50) capped at the corpus size.
    pub clusters: Option<usize>,
    pub cluster_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            prompt_len: 8,
            n_images: 1000,
            beta: 0.5,
            epochs: 30,
            batch_size: 10,
            lr0: 5e-4,
            lr_min: 0.0,
            weight_decay: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            temperature: 1.0,
            max_len: 20,
            fraction: 0.25,
            grad_scope: GradScope::Both,
            seed: 0,
            init_std: 0.02,
            clusters: None,
            cluster_max_iter: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 || self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::invalid("n_images, batch_size and max_len must be positive"));
        }
        if !(self.lr0 >= 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::invalid("learning rates must satisfy 0 <= lr_min <= lr0"));
        }
        if self.beta < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::invalid("beta and weight_decay must be non-negative"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::invalid("fraction must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps must be positive"));
        }
        if !(self.init_std >= 0.0) {
            return Err(Error::invalid("init_std must be non-negative"));
        }
        Ok(())
    }
}

/// Adam moment estimates for the prompt block, stored at f32 like the
/// prompt itself so resume round-trips are bitwise.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Matrix<f32>,
    pub v: Matrix<f32>,
    pub step: u64,
}

impl OptimizerState {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        OptimizerState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
        }
    }
}

/// Cosine annealing from lr0 at step 0 to lr_min at total_steps.
pub fn cosine_lr<S: Real>(step: usize, total_steps: usize, lr0: S, lr_min: S) -> S {
    debug_assert!(total_steps >= 1 && step <= total_steps);
    let ratio = step as f64 / total_steps as f64;
    let half = S::from_f64_const(0.5);
    let angle = S::from_f64_const(std::f64::consts::PI * ratio);
    lr_min + half * (lr0 - lr_min) * (S::one() + angle.cos())
}

/// One decoupled-weight-decay Adam step on the prompt block. The math
/// runs in f64 and the results round back to f32 storage.
pub fn adamw_update(
    prompt: &PromptState,
    grad: &Mat,
    state: &OptimizerState,
    lr: Scalar,
    cfg: &TrainConfig,
) -> Result<(PromptState, OptimizerState)> {
    if grad.rows() != prompt.len() || (!prompt.is_empty() && grad.cols() != prompt.width()) {
        return Err(Error::shape(
            "adamw_update",
            format!("{}x{}", prompt.len(), prompt.width()),
            format!("{}x{}", grad.rows(), grad.cols()),
        ));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let t = state.step + 1;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t as i32);
    let mut new_p = prompt.vectors().clone();
    let mut new_m = state.m.clone();
    let mut new_v = state.v.clone();
    for i in 0..grad.rows() {
        for j in 0..grad.cols() {
            let g = grad.get(i, j);
            let m = cfg.adam_beta1 * state.m.get(i, j) as Scalar + (1.0 - cfg.adam_beta1) * g;
            let v = cfg.adam_beta2 * state.v.get(i, j) as Scalar + (1.0 - cfg.adam_beta2) * g * g;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            let p = prompt.vectors().get(i, j) as Scalar;
            let updated = p - lr * cfg.weight_decay * p - lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
            new_p.set(i, j, updated as f32);
            new_m.set(i, j, m as f32);
            new_v.set(i, j, v as f32);
        }
    }
    Ok((
        PromptState::new(new_p, t)?,
        OptimizerState {
            m: new_m,
            v: new_v,
            step: t,
        },
    ))
}

/// One training pair with its transferred image and precomputed joint
/// embeddings (the backend is frozen, so these never change within an
/// epoch).
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub original_idx: usize,
    pub partner_idx: usize,
    pub original: ImageSample,
    pub transferred: ImageSample,
    pub v_orig: JointEmbedding,
    pub v_trans: JointEmbedding,
}

pub fn prepare_pair(
    images: &[ImageSample],
    i: usize,
    j: usize,
    bundle: &BackendBundle,
    fraction: Scalar,
) -> Result<TrainPair> {
    let transferred = make_transferred_image(&images[i], &images[j], bundle, fraction)?;
    let v_orig = bundle.model().joint_embed_image(&images[i])?;
    let v_trans = bundle.model().joint_embed_image(&transferred)?;
    Ok(TrainPair {
        original_idx: i,
        partner_idx: j,
        original: images[i].clone(),
        transferred,
        v_orig,
        v_trans,
    })
}

fn maybe_cos(a: &[Scalar], b: &[Scalar]) -> Option<Scalar> {
    crate::math::cosine(a, b).ok()
}

/// Normalized difference direction, or None when it is too small to
/// carry one.
fn delta_direction(a: &JointEmbedding, b: &JointEmbedding) -> Option<Vec<Scalar>> {
    let na = a.normalized().ok()?;
    let nb = b.normalized().ok()?;
    let d: Vec<Scalar> = na.vec.iter().zip(&nb.vec).map(|(x, y)| x - y).collect();
    if crate::math::norm_l2(&d) < DELTA_EPSILON {
        None
    } else {
        Some(d)
    }
}

/// Output of one self-critical step.
#[derive(Debug, Clone)]
pub struct ScstStep {
    /// Loss gradient w.r.t. the prompt block (already negated for a
    /// minimizing optimizer).
    pub grad: Mat,
    pub loss: LossReport,
    pub advantages: AdvantageBatch,
}

/// Runs the self-critical estimator over one batch of pairs.
pub fn scst_step(
    pairs: &[TrainPair],
    prompt: &PromptState,
    bundle: &BackendBundle,
    cfg: &TrainConfig,
    rng_seed: u64,
) -> Result<ScstStep> {
    if pairs.is_empty() {
        return Err(Error::invalid("scst_step needs a nonempty batch"));
    }
    let d = bundle.dims().d_dec;
    let mut grad_sum = Mat::zeros(prompt.len(), d);
    let mut sampled_rewards = Vec::with_capacity(pairs.len());
    let mut greedy_rewards = Vec::with_capacity(pairs.len());
    let mut live_pairs = 0usize;

    for (pair_idx, pair) in pairs.iter().enumerate() {
        let vis_o = crate::backend::VisualEncoder::encode_image(bundle.model(), &pair.original)?;
        let vis_t = crate::backend::VisualEncoder::encode_image(bundle.model(), &pair.transferred)?;
        let input_o = compose_input(&vis_o, prompt)?;
        let input_t = compose_input(&vis_t, prompt)?;

        let greedy_o = bundle.model().decode(&input_o, DecodeMode::Greedy, cfg.max_len, 1.0, 0)?;
        let greedy_t = bundle.model().decode(&input_t, DecodeMode::Greedy, cfg.max_len, 1.0, 0)?;
        let seed_o = derive_seed(rng_seed, &[pair_idx as u64, 0]);
        let seed_t = derive_seed(rng_seed, &[pair_idx as u64, 1]);
        let sampled_o = bundle
            .model()
            .decode(&input_o, DecodeMode::Sampled, cfg.max_len, cfg.temperature, seed_o)?;
        let sampled_t = bundle
            .model()
            .decode(&input_t, DecodeMode::Sampled, cfg.max_len, cfg.temperature, seed_t)?;

        let embed_text = |text: &str| bundle.model().joint_embed_text(text);
        let s_g = embed_text(&greedy_o.text)?;
        let s_g_t = embed_text(&greedy_t.text)?;
        let s_s = embed_text(&sampled_o.text)?;
        let s_s_t = embed_text(&sampled_t.text)?;

        let d_v = delta_direction(&pair.v_orig, &pair.v_trans);
        let attr_of = |s: &JointEmbedding, s_t: &JointEmbedding| -> Option<Scalar> {
            let dv = d_v.as_ref()?;
            let ds = delta_direction(s, s_t)?;
            maybe_cos(dv, &ds)
        };
        let sampled = PairRewards {
            attr: attr_of(&s_s, &s_s_t),
            sem: maybe_cos(&pair.v_orig.vec, &s_s.vec),
        };
        let greedy = PairRewards {
            attr: attr_of(&s_g, &s_g_t),
            sem: maybe_cos(&pair.v_orig.vec, &s_g.vec),
        };
        if sampled.attr.is_some() || sampled.sem.is_some() {
            live_pairs += 1;
        }

        let advantage = pair_advantage(&sampled, &greedy, cfg.beta);
        if advantage != 0.0 && !prompt.is_empty() {
            let (_, g_o) =
                bundle
                    .model()
                    .sequence_logprob_grad_tempered(&input_o, &sampled_o.seq, cfg.temperature)?;
            accumulate(&mut grad_sum, &g_o, advantage);
            if cfg.grad_scope == GradScope::Both {
                let (_, g_t) = bundle.model().sequence_logprob_grad_tempered(
                    &input_t,
                    &sampled_t.seq,
                    cfg.temperature,
                )?;
                accumulate(&mut grad_sum, &g_t, advantage);
            }
        }
        sampled_rewards.push(sampled);
        greedy_rewards.push(greedy);
    }

    if live_pairs == 0 {
        return Err(Error::DegenerateBatch(format!(
            "no usable reward signal in any of the {} pairs",
            pairs.len()
        )));
    }

    let n = pairs.len() as Scalar;
    let mut grad = grad_sum;
    for g in grad.data_mut() {
        *g = -*g / n;
    }

    let mean_of = |vals: &[PairRewards], pick: fn(&PairRewards) -> Option<Scalar>| -> Option<Scalar> {
        let xs: Vec<Scalar> = vals.iter().filter_map(pick).collect();
        if xs.is_empty() {
            None
        } else {
            Some(xs.iter().sum::<Scalar>() / xs.len() as Scalar)
        }
    };
    let mean_attr_g = mean_of(&greedy_rewards, |r| r.attr);
    let mean_sem_g = mean_of(&greedy_rewards, |r| r.sem);
    let skipped_attr = greedy_rewards.iter().filter(|r| r.attr.is_none()).count();
    let loss = LossReport::from_greedy_rewards(mean_attr_g, mean_sem_g, cfg.beta, pairs.len(), skipped_attr);
    let advantages = AdvantageBatch::from_pairs(sampled_rewards, greedy_rewards, cfg.beta)?;

    Ok(ScstStep {
        grad,
        loss,
        advantages,
    })
}

fn accumulate(sum: &mut Mat, grad: &Mat, weight: Scalar) {
    debug_assert_eq!(sum.rows(), grad.rows());
    for (s, &g) in sum.data_mut().iter_mut().zip(grad.data()) {
        *s += weight * g;
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    SkippedStep {
        epoch: usize,
        step: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: Scalar,
    pub l_a: Option<Scalar>,
    pub l_s: Option<Scalar>,
    pub l: Option<Scalar>,
    pub mean_advantage: Scalar,
    pub skipped_attr_pairs: usize,
    pub n_pairs: usize,
    pub mean_r_attr_sampled: Option<Scalar>,
    pub mean_r_sem_sampled: Option<Scalar>,
    pub mean_r_attr_greedy: Option<Scalar>,
    pub mean_r_sem_greedy: Option<Scalar>,
}

/// Complete record of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub digest_before: String,
    pub digest_after: String,
    pub steps_per_epoch: usize,
    pub total_steps: usize,
    pub n_images: usize,
    pub clusters: usize,
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// JSON-lines rendering: a run_start line, one line per record, and
    /// a run_end line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let start = serde_json::json!({
            "event": "run_start",
            "seed": self.seed,
            "digest": self.digest_before,
            "steps_per_epoch": self.steps_per_epoch,
            "total_steps": self.total_steps,
            "n_images": self.n_images,
            "clusters": self.clusters,
        });
        out.push_str(&start.to_string());
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("log record serializes"));
            out.push('\n');
        }
        let end = serde_json::json!({
            "event": "run_end",
            "digest": self.digest_after,
        });
        out.push_str(&end.to_string());
        out.push('\n');
        out
    }
}

/// Checkpointed state for resuming at an epoch boundary.
#[derive(Debug, Clone)]
pub struct ResumePoint {
    pub prompt: PromptState,
    pub optimizer: OptimizerState,
    /// First epoch the resumed run should execute.
    pub next_epoch: usize,
}

pub struct TrainOutcome {
    pub prompt: PromptState,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
}

/// Runs the full loop: embed, cluster, pair, then epochs of
/// self-critical steps. The per-epoch hook fires after each completed
/// epoch (checkpoint writers hang off it).
pub fn run_training(
    corpus: &[ImageSample],
    bundle: &BackendBundle,
    cfg: &TrainConfig,
    resume: Option<ResumePoint>,
    epoch_hook: &mut dyn FnMut(usize, &PromptState, &OptimizerState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = corpus.len().min(cfg.n_images);
    if n < 2 {
        return Err(Error::invalid(format!(
            "training needs at least 2 images, got {n}"
        )));
    }
    let images = &corpus[..n];
    let digest_before = bundle.digest_hex();

    let index = embed_corpus(images, bundle)?;
    let k = cfg.clusters.unwrap_or_else(|| default_k(n)).clamp(1, n);
    let assignment = cluster_corpus(&index, k, derive_seed(cfg.seed, &[DOM_CLUSTER]), cfg.cluster_max_iter)?;

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * steps_per_epoch).max(1);

    let d_dec = bundle.dims().d_dec;
    let (mut prompt, mut optimizer, start_epoch) = match resume {
        Some(r) => {
            if r.prompt.len() != cfg.prompt_len || r.prompt.width() != d_dec {
                return Err(Error::shape(
                    "resume checkpoint",
                    format!("{}x{d_dec}", cfg.prompt_len),
                    format!("{}x{}", r.prompt.len(), r.prompt.width()),
                ));
            }
            (r.prompt, r.optimizer, r.next_epoch)
        }
        None => (
            init_prompt_with_std(cfg.prompt_len, d_dec, derive_seed(cfg.seed, &[DOM_INIT]), cfg.init_std)?,
            OptimizerState::zeros(cfg.prompt_len, d_dec),
            0,
        ),
    };

    let mut records = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let batches = build_pair_batches(
            &assignment,
            &index,
            cfg.batch_size,
            derive_seed(cfg.seed, &[DOM_PAIRS, epoch as u64]),
        )?;
        // transferred images are regenerated for the epoch's pairing
        let mut epoch_pairs = Vec::with_capacity(batches.len());
        for batch in &batches {
            let mut pairs = Vec::with_capacity(batch.pairs.len());
            for &(i, j) in &batch.pairs {
                pairs.push(prepare_pair(images, i, j, bundle, cfg.fraction)?);
            }
            epoch_pairs.push(pairs);
        }

        for (batch_idx, pairs) in epoch_pairs.iter().enumerate() {
            let global_step = epoch * steps_per_epoch + batch_idx;
            let lr = cosine_lr(global_step, total_steps, cfg.lr0, cfg.lr_min);
            let step_seed = derive_seed(cfg.seed, &[DOM_SCST, epoch as u64, batch_idx as u64]);
            match scst_step(pairs, &prompt, bundle, cfg, step_seed) {
                Ok(out) => {
                    let (p2, o2) = adamw_update(&prompt, &out.grad, &optimizer, lr, cfg)?;
                    prompt = p2;
                    optimizer = o2;
                    let mean_of = |side: &[PairRewards], pick: fn(&PairRewards) -> Option<Scalar>| {
                        let xs: Vec<Scalar> = side.iter().filter_map(pick).collect();
                        if xs.is_empty() {
                            None
                        } else {
                            Some(xs.iter().sum::<Scalar>() / xs.len() as Scalar)
                        }
                    };
                    records.push(LogRecord::Step(StepRecord {
                        epoch,
                        step: global_step,
                        lr,
                        l_a: out.loss.l_a,
                        l_s: out.loss.l_s,
                        l: out.loss.l,
                        mean_advantage: out.advantages.mean_advantage(),
                        skipped_attr_pairs: out.loss.skipped_attr,
                        n_pairs: out.loss.n,
                        mean_r_attr_sampled: mean_of(&out.advantages.sampled, |r| r.attr),
                        mean_r_sem_sampled: mean_of(&out.advantages.sampled, |r| r.sem),
                        mean_r_attr_greedy: mean_of(&out.advantages.greedy, |r| r.attr),
                        mean_r_sem_greedy: mean_of(&out.advantages.greedy, |r| r.sem),
                    }));
                }
                Err(Error::DegenerateBatch(reason)) => {
                    records.push(LogRecord::SkippedStep {
                        epoch,
                        step: global_step,
                        reason,
                    });
                }
                Err(e) => return Err(e),
            }
        }
        epoch_hook(epoch, &prompt, &optimizer)?;
    }

    let log = TrainLog {
        seed: cfg.seed,
        digest_before,
        digest_after: bundle.digest_hex(),
        steps_per_epoch,
        total_steps,
        n_images: n,
        clusters: k,
        records,
    };
    Ok(TrainOutcome {
        prompt,
        optimizer,
        log,
    })
}

/// Trains from scratch and returns the final prompt with the run log.
pub fn train(
    corpus: &[ImageSample],
    bundle: &BackendBundle,
    cfg: &TrainConfig,
) -> Result<(PromptState, TrainLog)> {
    let outcome = run_training(corpus, bundle, cfg, None, &mut |_, _, _| Ok(()))?;
    Ok((outcome.prompt, outcome.log))
}

// ── optimizer-state persistence ──────────────────────────────────────

/// Layout: magic `GIOS`, version u32 LE, M u32 LE, d u32 LE, first
/// moments f32 LE row-major, second moments f32 LE row-major, step u64
/// LE.
pub fn encode_optimizer(state: &OptimizerState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(OPT_MAGIC);
    out.extend_from_slice(&OPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(state.m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(state.m.cols() as u32).to_le_bytes());
    for &v in state.m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in state.v.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&state.step.to_le_bytes());
    out
}

pub fn decode_optimizer(bytes: &[u8]) -> Result<OptimizerState> {
    let fail = |offset: usize, detail: &str| Error::Format {
        offset: offset as u64,
        detail: detail.to_string(),
    };
    if bytes.len() < 16 {
        return Err(fail(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != OPT_MAGIC {
        return Err(fail(0, "bad magic, expected GIOS"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != OPT_VERSION {
        return Err(fail(4, "unsupported version"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let count = rows * cols;
    let expect = 16 + count * 8 + 8;
    if bytes.len() != expect {
        return Err(fail(bytes.len(), "size does not match header"));
    }
    let read_block = |at: usize| -> Vec<f32> {
        bytes[at..at + count * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    };
    let m = Matrix::from_vec(rows, cols, read_block(16))?;
    let v = Matrix::from_vec(rows, cols, read_block(16 + count * 4))?;
    let step = u64::from_le_bytes(bytes[16 + count * 8..expect].try_into().unwrap());
    Ok(OptimizerState { m, v, step })
}

pub fn save_optimizer(state: &OptimizerState, path: &Path) -> Result<()> {
    write_atomic(path, &encode_optimizer(state))
}

pub fn load_optimizer(path: &Path) -> Result<OptimizerState> {
    decode_optimizer(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{build_toy_backend, DimSpec, Grid3};
    use crate::prompt::init_prompt;
    use crate::rng::SplitMix64;

    #[test]
    fn config_defaults_match_the_reference_recipe() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.prompt_len, 8);
        assert_eq!(cfg.n_images, 1000);
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.epochs, 30);
        assert_eq!(cfg.batch_size, 10);
        assert_eq!(cfg.lr0, 5e-4);
        assert_eq!(cfg.init_std, 0.02);
        cfg.validate().unwrap();
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        assert_eq!(cosine_lr::<f64>(0, 100, 5e-4, 0.0), 5e-4);
        assert!((cosine_lr::<f64>(100, 100, 5e-4, 0.0)).abs() < 1e-19);
        assert!((cosine_lr::<f64>(50, 100, 5e-4, 1e-4) - 3e-4).abs() < 1e-12);
        // f32 instantiation
        assert!((cosine_lr(50, 100, 5e-4f32, 1e-4) - 3e-4).abs() < 1e-7);
    }

    #[test]
    fn adamw_zero_grad_fixpoints() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let p = init_prompt(3, 4, 5).unwrap();
        let s = OptimizerState::zeros(3, 4);
        let (p2, s2) = adamw_update(&p, &Mat::zeros(3, 4), &s, 1e-3, &cfg).unwrap();
        assert_eq!(p2.vectors(), p.vectors());
        assert_eq!(p2.step(), 1);
        assert_eq!(s2.step, 1);

        // decoupled decay with zero gradient: p <- p(1 - lr w)
        let cfg_wd = TrainConfig {
            weight_decay: 0.1,
            ..TrainConfig::default()
        };
        let (p3, _) = adamw_update(&p, &Mat::zeros(3, 4), &s, 1e-2, &cfg_wd).unwrap();
        for (a, b) in p3.vectors().data().iter().zip(p.vectors().data()) {
            let expect = (*b as f64 * (1.0 - 1e-2 * 0.1)) as f32;
            assert_eq!(*a, expect);
        }
    }

    #[test]
    fn adamw_first_step_matches_hand_evaluation() {
        // 1x1 prompt at zero, g = 0.5, lr = 1e-3: evaluate the
        // recurrence by hand for t = 1
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let p = PromptState::new(Matrix::from_vec(1, 1, vec![0.0f32]).unwrap(), 0).unwrap();
        let s = OptimizerState::zeros(1, 1);
        let g = Mat::from_vec(1, 1, vec![0.5]).unwrap();
        let (p2, s2) = adamw_update(&p, &g, &s, 1e-3, &cfg).unwrap();

        let m = 0.1 * 0.5;
        let v = 0.001 * 0.25;
        let m_hat: f64 = m / (1.0 - 0.9);
        let v_hat: f64 = v / (1.0 - 0.999);
        let expect = (0.0 - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8)) as f32;
        assert_eq!(p2.vectors().get(0, 0), expect);
        assert_eq!(s2.m.get(0, 0), m as f32);
        assert_eq!(s2.v.get(0, 0), v as f32);

        let bad = Mat::from_vec(1, 1, vec![f64::NAN]).unwrap();
        assert!(matches!(
            adamw_update(&p, &bad, &s, 1e-3, &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    fn toy_corpus(dims: &DimSpec, n: usize, seed: u64) -> Vec<ImageSample> {
        let mut rng = SplitMix64::new(seed);
        (0..n)
            .map(|i| {
                let data: Vec<Scalar> = (0..dims.image_dim()).map(|_| rng.next_f64()).collect();
                ImageSample::new(
                    format!("img{i:03}"),
                    Grid3::from_vec(dims.image_h, dims.image_w, dims.image_c, data).unwrap(),
                )
                .unwrap()
            })
            .collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            n_images: 12,
            epochs: 2,
            batch_size: 5,
            max_len: 6,
            clusters: Some(2),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn scst_step_is_seed_deterministic() {
        let bundle = build_toy_backend(41, DimSpec::default()).unwrap();
        let dims = bundle.dims().clone();
        let corpus = toy_corpus(&dims, 6, 1);
        let cfg = small_cfg();
        let prompt = init_prompt(4, dims.d_dec, 0).unwrap();
        let pairs: Vec<TrainPair> = (0..3)
            .map(|i| prepare_pair(&corpus, i, i + 3, &bundle, cfg.fraction).unwrap())
            .collect();
        let a = scst_step(&pairs, &prompt, &bundle, &cfg, 77).unwrap();
        let b = scst_step(&pairs, &prompt, &bundle, &cfg, 77).unwrap();
        assert_eq!(a.grad, b.grad);
        let c = scst_step(&pairs, &prompt, &bundle, &cfg, 78).unwrap();
        assert!(a.grad != c.grad || a.advantages.advantages == c.advantages.advantages);
    }

    #[test]
    fn peaked_decoder_gives_zero_gradient() {
        // rig the decoder so greedy and sampled captions always agree:
        // every advantage is zero and so is the batch gradient
        let dims = DimSpec::default();
        let mut params = crate::backend::toy::ToyParams::seeded(2, dims.clone()).unwrap();
        for b in params.dec_out_b.iter_mut() {
            *b = 0.0;
        }
        params.dec_out_b[4] = 200.0;
        let bundle = crate::backend::BackendBundle::new(std::sync::Arc::new(
            crate::backend::toy::ToyBackend::from_params(params).unwrap(),
        ));
        let corpus = toy_corpus(&dims, 4, 3);
        let cfg = small_cfg();
        let prompt = init_prompt(4, dims.d_dec, 1).unwrap();
        let pairs: Vec<TrainPair> = (0..2)
            .map(|i| prepare_pair(&corpus, i, i + 2, &bundle, cfg.fraction).unwrap())
            .collect();
        let out = scst_step(&pairs, &prompt, &bundle, &cfg, 5).unwrap();
        assert!(out.advantages.advantages.iter().all(|&a| a == 0.0));
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_epochs_returns_the_initial_prompt() {
        let bundle = build_toy_backend(43, DimSpec::default()).unwrap();
        let dims = bundle.dims().clone();
        let corpus = toy_corpus(&dims, 8, 9);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let (prompt, log) = train(&corpus, &bundle, &cfg).unwrap();
        let fresh = init_prompt_with_std(
            cfg.prompt_len,
            dims.d_dec,
            derive_seed(cfg.seed, &[DOM_INIT]),
            cfg.init_std,
        )
        .unwrap();
        assert_eq!(prompt, fresh);
        assert!(log.records.is_empty());
        assert_eq!(log.digest_before, log.digest_after);
    }

    #[test]
    fn training_is_reproducible_and_leaves_the_backend_frozen() {
        let bundle = build_toy_backend(47, DimSpec::default()).unwrap();
        let dims = bundle.dims().clone();
        let corpus = toy_corpus(&dims, 12, 5);
        let cfg = small_cfg();
        let before = bundle.digest_hex();
        let (p1, log1) = train(&corpus, &bundle, &cfg).unwrap();
        let (p2, log2) = train(&corpus, &bundle, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(log1.to_jsonl(), log2.to_jsonl());
        assert_eq!(log1.digest_before, before);
        assert_eq!(log1.digest_after, before);
        assert_eq!(bundle.digest_hex(), before);
        // something actually happened
        assert_eq!(log1.records.len(), cfg.epochs * log1.steps_per_epoch);
        assert!(p1.step() > 0);
    }

    #[test]
    fn logged_lr_matches_the_schedule_exactly() {
        let bundle = build_toy_backend(53, DimSpec::default()).unwrap();
        let dims = bundle.dims().clone();
        let corpus = toy_corpus(&dims, 10, 6);
        let cfg = small_cfg();
        let (_, log) = train(&corpus, &bundle, &cfg).unwrap();
        for r in &log.records {
            if let LogRecord::Step(s) = r {
                assert_eq!(s.lr, cosine_lr(s.step, log.total_steps, cfg.lr0, cfg.lr_min));
                // loss recomputes from the logged greedy rewards
                if let (Some(l_a), Some(r_attr)) = (s.l_a, s.mean_r_attr_greedy) {
                    assert!((l_a - (1.0 - r_attr)).abs() < 1e-9);
                }
                if let (Some(l_s), Some(r_sem)) = (s.l_s, s.mean_r_sem_greedy) {
                    assert!((l_s - (1.0 - r_sem)).abs() < 1e-9);
                }
                if let (Some(l), Some(l_a), Some(l_s)) = (s.l, s.l_a, s.l_s) {
                    assert!((l - (l_a + cfg.beta * l_s)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let bundle = build_toy_backend(59, DimSpec::default()).unwrap();
        let dims = bundle.dims().clone();
        let corpus = toy_corpus(&dims, 10, 7);
        let cfg = TrainConfig {
            epochs: 4,
            ..small_cfg()
        };
        let full = run_training(&corpus, &bundle, &cfg, None, &mut |_, _, _| Ok(())).unwrap();

        // capture state after epoch 1, then resume from it
        let mut snapshot: Option<(PromptState, OptimizerState)> = None;
        run_training(&corpus, &bundle, &cfg, None, &mut |epoch, p, o| {
            if epoch == 1 {
                snapshot = Some((p.clone(), o.clone()));
            }
            Ok(())
        })
        .unwrap();
        let (p, o) = snapshot.unwrap();
        // round-trip the snapshot through the wire formats first
        let p = crate::prompt::decode_prompt(&crate::prompt::encode_prompt(&p)).unwrap();
        let o = decode_optimizer(&encode_optimizer(&o)).unwrap();
        let resumed = run_training(
            &corpus,
            &bundle,
            &cfg,
            Some(ResumePoint {
                prompt: p,
                optimizer: o,
                next_epoch: 2,
            }),
            &mut |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(resumed.prompt, full.prompt);
        assert_eq!(
            encode_optimizer(&resumed.optimizer),
            encode_optimizer(&full.optimizer)
        );
    }

    #[test]
    fn optimizer_state_round_trips() {
        let mut s = OptimizerState::zeros(2, 3);
        s.m.set(0, 1, 0.25);
        s.v.set(1, 2, 0.5);
        s.step = 17;
        let bytes = encode_optimizer(&s);
        assert_eq!(decode_optimizer(&bytes).unwrap(), s);
        assert!(decode_optimizer(&bytes[..10]).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(decode_optimizer(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn degenerate_corpus_still_trains_on_the_semantic_channel() {
        // identical images: every attribute delta vanishes, the
        // semantic term keeps the run alive
        let bundle = build_toy_backend(61, DimSpec::default()).unwrap();
        let dims = bundle.dims().clone();
        let img = toy_corpus(&dims, 1, 8).remove(0);
        let corpus: Vec<ImageSample> = (0..6)
            .map(|i| {
                let mut c = img.clone();
                c.id = format!("dup{i}");
                c
            })
            .collect();
        let cfg = TrainConfig {
            n_images: 6,
            epochs: 1,
            batch_size: 3,
            max_len: 5,
            clusters: Some(1),
            ..TrainConfig::default()
        };
        let (_, log) = train(&corpus, &bundle, &cfg).unwrap();
        for r in &log.records {
            if let LogRecord::Step(s) = r {
                assert_eq!(s.l_a, None);
                assert_eq!(s.skipped_attr_pairs, s.n_pairs);
                assert!(s.l_s.is_some());
            }
        }
    }
}
