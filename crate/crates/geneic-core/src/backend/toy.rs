//! The deterministic toy backend.
//!
//! A complete, desk-scale implementation of all four model roles with
//! hand-written forward and backward passes:
//!
//! * encoder: per-slot affine map from pixels into decoder space (the
//!   visual projection is folded in, so slots are ready to concatenate
//!   with prompt vectors);
//! * decoder: an autoregressive state machine. The composed slots are
//!   mixed into an initial state `h₀ = Σ γʳ·U·slotᵣ / Σ γʳ`; each step
//!   applies `z_t = tanh(h_t + P_t)`, emits logits `W_out·z_t + b_out`,
//!   and feeds the emitted token back through `h_{t+1} = α·h_t +
//!   R·E[y_t]`. The terminator is masked at step 0 so captions are
//!   never empty. Gradients w.r.t. the prompt slots are exact
//!   reverse-mode derivatives of the sequence log-probability;
//! * joint scorer: affine image map and bag-of-words text map into a
//!   shared space;
//! * autoencoder: `f = Q·x + b` with orthonormal columns of `Q`, so
//!   `decode(encode(x)) = x` up to f64 rounding.
//!
//! Parameters are drawn once from seeded SplitMix64 streams at f32
//! precision (the rotation `Q` stays f64 to keep reconstruction exact)
//! and never change afterwards; the parameter blob and its SHA-256
//! digest are reproducible for a fixed seed.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::interpret::VocabEmbeddings;
use crate::math::{argmax_masked, logsumexp_masked};
use crate::prompt::ComposedInput;
use crate::rng::{derive_seed, GaussianSource, SplitMix64};
use crate::{Mat, Scalar};

use super::blob::BlobWriter;
use super::{
    Backend, CaptionDecoder, CaptionSample, DecodeMode, DimSpec, FeatureMapSet, Grid3, ImageSample,
    JointEmbedding, JointScorer, LatentAutoencoder, TokenId, TokenSeq, VisualEncoder,
};

/// Terminator token id of the toy vocabulary.
pub const EOS: TokenId = 0;

/// Decay of the decoder state between steps.
const STATE_DECAY: Scalar = 0.6;
/// Geometric weight over input slots when forming the initial state.
const SLOT_DECAY: Scalar = 0.75;

const BASE_WORDS: [&str; 16] = [
    "<eos>", "a", "photo", "of", "red", "blue", "bird", "car", "flower", "the", "with", "on",
    "is", "green", "small", "big",
];

fn vocab_words(vocab: usize) -> Vec<String> {
    (0..vocab)
        .map(|i| {
            if i < BASE_WORDS.len() {
                BASE_WORDS[i].to_string()
            } else {
                format!("tok{i}")
            }
        })
        .collect()
}

/// Raw toy-backend parameters. Public so tests and probes can build
/// rigged backends from explicit values via [`ToyBackend::from_params`].
#[derive(Debug, Clone)]
pub struct ToyParams {
    pub dims: DimSpec,
    /// [visual_slots * d_dec, image_dim]
    pub enc_weight: Vec<f32>,
    /// [visual_slots, d_dec]
    pub enc_bias: Vec<f32>,
    /// [latent_dim, image_dim], orthonormal columns. Kept at f64: the
    /// reconstruction bound needs orthonormality beyond f32 precision.
    pub ae_rotation: Vec<f64>,
    /// [latent_dim]
    pub ae_bias: Vec<f32>,
    /// [vocab, d_dec]
    pub dec_embed: Vec<f32>,
    /// [d_dec, d_dec]
    pub dec_mix: Vec<f32>,
    /// [d_dec, d_dec]
    pub dec_recur: Vec<f32>,
    /// [max_len, d_dec]
    pub dec_pos: Vec<f32>,
    /// [vocab, d_dec]
    pub dec_out_w: Vec<f32>,
    /// [vocab]
    pub dec_out_b: Vec<f32>,
    /// [d_j, image_dim]
    pub joint_img_w: Vec<f32>,
    /// [d_j]
    pub joint_img_b: Vec<f32>,
    /// [vocab, d_j]
    pub joint_txt: Vec<f32>,
}

// Sub-seed tags, one per drawn tensor.
const TAG_ENC_W: u64 = 1;
const TAG_ENC_B: u64 = 2;
const TAG_AE_Q: u64 = 3;
const TAG_AE_B: u64 = 4;
const TAG_DEC_EMBED: u64 = 5;
const TAG_DEC_MIX: u64 = 6;
const TAG_DEC_RECUR: u64 = 7;
const TAG_DEC_POS: u64 = 8;
const TAG_DEC_OUT_W: u64 = 9;
const TAG_DEC_OUT_B: u64 = 10;
const TAG_JOINT_IMG_W: u64 = 11;
const TAG_JOINT_IMG_B: u64 = 12;
const TAG_JOINT_TXT: u64 = 13;

fn draw_f32(seed: u64, tag: u64, count: usize, std: f64) -> Vec<f32> {
    let mut g = GaussianSource::new(derive_seed(seed, &[tag]));
    (0..count).map(|_| (g.next_gaussian() * std) as f32).collect()
}

/// Orthonormalizes the columns of a latent_dim x image_dim Gaussian
/// draw with two modified Gram-Schmidt passes.
fn orthonormal_columns(seed: u64, latent_dim: usize, image_dim: usize) -> Vec<f64> {
    let mut g = GaussianSource::new(derive_seed(seed, &[TAG_AE_Q]));
    let mut cols: Vec<Vec<f64>> = (0..image_dim)
        .map(|_| (0..latent_dim).map(|_| g.next_gaussian()).collect())
        .collect();
    for j in 0..image_dim {
        for _pass in 0..2 {
            for i in 0..j {
                let proj: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                for k in 0..latent_dim {
                    cols[j][k] -= proj * cols[i][k];
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm > 1e-9, "degenerate random draw during orthonormalization");
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    // row-major [latent_dim, image_dim]
    let mut out = vec![0.0; latent_dim * image_dim];
    for (j, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            out[r * image_dim + j] = v;
        }
    }
    out
}

impl ToyParams {
    /// Draws a full parameter set for a seed.
    pub fn seeded(seed: u64, dims: DimSpec) -> Result<Self> {
        dims.validate()?;
        let img = dims.image_dim();
        let latent = dims.latent_dim();
        let d = dims.d_dec;
        let inv_sqrt_img = 1.0 / (img as f64).sqrt();
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        Ok(ToyParams {
            enc_weight: draw_f32(seed, TAG_ENC_W, dims.visual_slots * d * img, inv_sqrt_img),
            enc_bias: draw_f32(seed, TAG_ENC_B, dims.visual_slots * d, 0.5),
            ae_rotation: orthonormal_columns(seed, latent, img),
            ae_bias: draw_f32(seed, TAG_AE_B, latent, 0.1),
            dec_embed: draw_f32(seed, TAG_DEC_EMBED, dims.vocab * d, 1.0),
            dec_mix: draw_f32(seed, TAG_DEC_MIX, d * d, inv_sqrt_d),
            dec_recur: draw_f32(seed, TAG_DEC_RECUR, d * d, inv_sqrt_d),
            dec_pos: draw_f32(seed, TAG_DEC_POS, dims.max_len * d, 0.5),
            dec_out_w: draw_f32(seed, TAG_DEC_OUT_W, dims.vocab * d, 1.0),
            dec_out_b: draw_f32(seed, TAG_DEC_OUT_B, dims.vocab, 0.3),
            joint_img_w: draw_f32(seed, TAG_JOINT_IMG_W, dims.d_j * img, inv_sqrt_img),
            joint_img_b: draw_f32(seed, TAG_JOINT_IMG_B, dims.d_j, 0.3),
            joint_txt: draw_f32(seed, TAG_JOINT_TXT, dims.vocab * dims.d_j, 1.0),
            dims,
        })
    }
}

/// The frozen toy model stack.
pub struct ToyBackend {
    dims: DimSpec,
    params: ToyParams,
    // f64 working copies
    enc_weight: Mat,
    enc_bias: Mat,
    ae_rotation: Mat,
    ae_bias: Vec<Scalar>,
    embed: Mat,
    mix: Mat,
    recur: Mat,
    pos: Mat,
    out_w: Mat,
    out_b: Vec<Scalar>,
    joint_img_w: Mat,
    joint_img_b: Vec<Scalar>,
    joint_txt: Mat,
    words: Vec<String>,
    word_ids: HashMap<String, TokenId>,
}

fn lift(rows: usize, cols: usize, data: &[f32], name: &str) -> Result<Mat> {
    if data.len() != rows * cols {
        return Err(Error::shape(
            format!("toy parameter {name}"),
            format!("{rows}x{cols}"),
            format!("{} values", data.len()),
        ));
    }
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("toy parameter {name}")));
    }
    Mat::from_vec(rows, cols, data.iter().map(|&v| v as Scalar).collect())
}

impl ToyBackend {
    pub fn from_params(params: ToyParams) -> Result<Self> {
        let dims = params.dims.clone();
        dims.validate()?;
        let img = dims.image_dim();
        let latent = dims.latent_dim();
        let d = dims.d_dec;

        let ae_rotation = Mat::from_vec(latent, img, params.ae_rotation.clone())?;
        if !ae_rotation.all_finite() {
            return Err(Error::NonFinite("toy parameter ae.rotation".into()));
        }
        // Columns must be orthonormal or the reconstruction contract breaks.
        for a in 0..img {
            for b in a..img {
                let mut acc = 0.0;
                for r in 0..latent {
                    acc += ae_rotation.get(r, a) * ae_rotation.get(r, b);
                }
                let expect = if a == b { 1.0 } else { 0.0 };
                if (acc - expect).abs() > 1e-8 {
                    return Err(Error::invalid(format!(
                        "ae.rotation columns are not orthonormal: <q{a}, q{b}> = {acc}"
                    )));
                }
            }
        }

        let words = vocab_words(dims.vocab);
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();

        Ok(ToyBackend {
            enc_weight: lift(dims.visual_slots * d, img, &params.enc_weight, "enc.weight")?,
            enc_bias: lift(dims.visual_slots, d, &params.enc_bias, "enc.bias")?,
            ae_rotation,
            ae_bias: params.ae_bias.iter().map(|&v| v as Scalar).collect(),
            embed: lift(dims.vocab, d, &params.dec_embed, "dec.embed")?,
            mix: lift(d, d, &params.dec_mix, "dec.mix")?,
            recur: lift(d, d, &params.dec_recur, "dec.recur")?,
            pos: lift(dims.max_len, d, &params.dec_pos, "dec.pos")?,
            out_w: lift(dims.vocab, d, &params.dec_out_w, "dec.out_w")?,
            out_b: params.dec_out_b.iter().map(|&v| v as Scalar).collect(),
            joint_img_w: lift(dims.d_j, img, &params.joint_img_w, "joint.img_w")?,
            joint_img_b: params.joint_img_b.iter().map(|&v| v as Scalar).collect(),
            joint_txt: lift(dims.vocab, dims.d_j, &params.joint_txt, "joint.txt")?,
            words,
            word_ids,
            dims,
            params,
        })
    }

    pub fn params(&self) -> &ToyParams {
        &self.params
    }

    fn check_image(&self, image: &ImageSample, context: &str) -> Result<()> {
        let d = &self.dims;
        let p = &image.pixels;
        if p.height != d.image_h || p.width != d.image_w || p.channels != d.image_c {
            return Err(Error::shape(
                context.to_string(),
                format!("{}x{}x{}", d.image_h, d.image_w, d.image_c),
                p.shape_string(),
            ));
        }
        Ok(())
    }

    fn check_input(&self, input: &ComposedInput, context: &str) -> Result<()> {
        if input.slots.rows() == 0 {
            return Err(Error::invalid(format!("{context}: empty composed input")));
        }
        if input.slots.cols() != self.dims.d_dec {
            return Err(Error::shape(
                context.to_string(),
                format!("slot width {}", self.dims.d_dec),
                format!("slot width {}", input.slots.cols()),
            ));
        }
        Ok(())
    }

    /// Initial decoder state: geometric-weighted mean of mixed slots.
    fn initial_state(&self, input: &ComposedInput) -> Vec<Scalar> {
        let d = self.dims.d_dec;
        let mut acc = vec![0.0; d];
        let mut weight = SLOT_DECAY.powi(0); // running γʳ
        let mut total = 0.0;
        for r in 0..input.slots.rows() {
            let mixed = self.mix.matvec(input.slots.row(r));
            for (a, m) in acc.iter_mut().zip(&mixed) {
                *a += weight * m;
            }
            total += weight;
            weight *= SLOT_DECAY;
        }
        for a in acc.iter_mut() {
            *a /= total;
        }
        acc
    }

    fn position_row(&self, t: usize) -> &[Scalar] {
        self.pos.row(t.min(self.dims.max_len - 1))
    }

    /// One decoder step: state -> (z, logits).
    fn step_activations(&self, h: &[Scalar], t: usize) -> (Vec<Scalar>, Vec<Scalar>) {
        let p = self.position_row(t);
        let z: Vec<Scalar> = h.iter().zip(p).map(|(&hv, &pv)| (hv + pv).tanh()).collect();
        let mut logits = self.out_w.matvec(&z);
        for (l, &b) in logits.iter_mut().zip(&self.out_b) {
            *l += b;
        }
        (z, logits)
    }

    fn advance_state(&self, h: &mut [Scalar], token: TokenId) {
        let fed = self.recur.matvec(self.embed.row(token as usize));
        for (hv, f) in h.iter_mut().zip(&fed) {
            *hv = STATE_DECAY * *hv + f;
        }
    }

    /// The terminator cannot be emitted at step 0, so captions are
    /// never empty.
    fn allowed(t: usize, token: usize) -> bool {
        t > 0 || token != EOS as usize
    }

    /// Tempered step distribution and its log-normalizer.
    fn step_probs(&self, logits: &[Scalar], t: usize, temperature: Scalar) -> (Vec<Scalar>, Scalar) {
        let scaled: Vec<Scalar> = logits.iter().map(|&l| l / temperature).collect();
        let lse = logsumexp_masked(&scaled, |i| Self::allowed(t, i));
        let probs = scaled
            .iter()
            .enumerate()
            .map(|(i, &s)| if Self::allowed(t, i) { (s - lse).exp() } else { 0.0 })
            .collect();
        (probs, lse)
    }

    fn token_string(&self, seq: &TokenSeq) -> String {
        let mut out = String::new();
        for &t in &seq.tokens {
            if t == EOS {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&self.words[t as usize]);
        }
        out
    }

    fn validate_tokens(&self, tokens: &TokenSeq) -> Result<()> {
        if tokens.tokens.is_empty() {
            return Err(Error::invalid("cannot score an empty token sequence"));
        }
        for (i, &t) in tokens.tokens.iter().enumerate() {
            if (t as usize) >= self.dims.vocab {
                return Err(Error::invalid(format!(
                    "token id {t} at position {i} exceeds vocabulary size {}",
                    self.dims.vocab
                )));
            }
            if t == EOS && i + 1 != tokens.tokens.len() {
                return Err(Error::invalid("terminator inside a token sequence"));
            }
        }
        if tokens.tokens[0] == EOS {
            return Err(Error::invalid(
                "sequence starts with the terminator, which the decoder cannot emit",
            ));
        }
        Ok(())
    }
}

impl VisualEncoder for ToyBackend {
    fn encode_image(&self, image: &ImageSample) -> Result<VisualEmbedding> {
        self.check_image(image, "encode_image")?;
        let d = self.dims.d_dec;
        let x = image.pixels.data();
        let mut tokens = Mat::zeros(self.dims.visual_slots, d);
        for s in 0..self.dims.visual_slots {
            for c in 0..d {
                let w = self.enc_weight.row(s * d + c);
                tokens.set(s, c, self.enc_bias.get(s, c) + crate::math::dot(w, x));
            }
        }
        Ok(VisualEmbedding { tokens })
    }
}

use super::VisualEmbedding;

impl CaptionDecoder for ToyBackend {
    fn decode(
        &self,
        input: &ComposedInput,
        mode: DecodeMode,
        max_len: usize,
        temperature: Scalar,
        rng_seed: u64,
    ) -> Result<CaptionSample> {
        self.check_input(input, "decode")?;
        if max_len == 0 {
            return Err(Error::invalid("decode requires max_len >= 1"));
        }
        if mode == DecodeMode::Sampled && !(temperature > 0.0) {
            return Err(Error::invalid("sampled decoding requires temperature > 0"));
        }
        let mut rng = SplitMix64::new(rng_seed);
        let mut h = self.initial_state(input);
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut eos_terminated = false;
        for t in 0..max_len {
            let (_, logits) = self.step_activations(&h, t);
            let token = match mode {
                DecodeMode::Greedy => {
                    argmax_masked(&logits, |i| Self::allowed(t, i)).expect("nonempty vocabulary")
                }
                DecodeMode::Sampled => {
                    let (probs, _) = self.step_probs(&logits, t, temperature);
                    let u = rng.next_f64();
                    let mut cum = 0.0;
                    let mut chosen = None;
                    for (i, &p) in probs.iter().enumerate() {
                        if !Self::allowed(t, i) {
                            continue;
                        }
                        cum += p;
                        if u < cum {
                            chosen = Some(i);
                            break;
                        }
                    }
                    // rounding can leave u just past the accumulated mass
                    chosen.unwrap_or_else(|| {
                        (0..logits.len())
                            .rev()
                            .find(|&i| Self::allowed(t, i))
                            .expect("nonempty vocabulary")
                    })
                }
            };
            // Recorded log-probability matches the selection distribution:
            // base probabilities for greedy, tempered ones for sampling.
            let record_temp = match mode {
                DecodeMode::Greedy => 1.0,
                DecodeMode::Sampled => temperature,
            };
            let (_, lse) = self.step_probs(&logits, t, record_temp);
            logprobs.push(logits[token] / record_temp - lse);
            tokens.push(token as TokenId);
            if token as TokenId == EOS {
                eos_terminated = true;
                break;
            }
            self.advance_state(&mut h, token as TokenId);
        }
        let seq = TokenSeq {
            tokens,
            eos_terminated,
        };
        let text = self.token_string(&seq);
        Ok(CaptionSample {
            seq,
            text,
            logprobs,
            mode,
        })
    }

    fn sequence_logprob_grad_tempered(
        &self,
        input: &ComposedInput,
        tokens: &TokenSeq,
        temperature: Scalar,
    ) -> Result<(Scalar, Mat)> {
        self.check_input(input, "sequence_logprob_grad")?;
        self.validate_tokens(tokens)?;
        if !(temperature > 0.0) {
            return Err(Error::invalid("scoring requires temperature > 0"));
        }
        let d = self.dims.d_dec;
        let steps = tokens.tokens.len();

        // forward, teacher-forcing the given tokens
        let mut h = self.initial_state(input);
        let mut zs = Vec::with_capacity(steps);
        let mut probs_per_step = Vec::with_capacity(steps);
        let mut logprob = 0.0;
        for (t, &tok) in tokens.tokens.iter().enumerate() {
            let (z, logits) = self.step_activations(&h, t);
            let (probs, lse) = self.step_probs(&logits, t, temperature);
            logprob += logits[tok as usize] / temperature - lse;
            zs.push(z);
            probs_per_step.push(probs);
            if tok != EOS {
                self.advance_state(&mut h, tok);
            }
        }

        // reverse accumulation into dL/dh0
        let mut g_h = vec![0.0; d];
        for t in (0..steps).rev() {
            let tok = tokens.tokens[t] as usize;
            let probs = &probs_per_step[t];
            let mut d_logits = vec![0.0; self.dims.vocab];
            for (i, dl) in d_logits.iter_mut().enumerate() {
                if Self::allowed(t, i) {
                    let indicator = if i == tok { 1.0 } else { 0.0 };
                    *dl = (indicator - probs[i]) / temperature;
                }
            }
            let g_z = self.out_w.matvec_transposed(&d_logits);
            let z = &zs[t];
            for i in 0..d {
                g_h[i] = STATE_DECAY * g_h[i] + (1.0 - z[i] * z[i]) * g_z[i];
            }
        }

        // dL/dslot_r = (γʳ / Σγ) · Uᵀ · dL/dh0, restricted to the prompt block
        let back = self.mix.matvec_transposed(&g_h);
        let n_slots = input.slots.rows();
        let total: Scalar = (0..n_slots).map(|r| SLOT_DECAY.powi(r as i32)).sum();
        let span = input.prompt_span.clone();
        let mut grad = Mat::zeros(span.len(), d);
        for (gi, r) in span.enumerate() {
            let scale = SLOT_DECAY.powi(r as i32) / total;
            for c in 0..d {
                grad.set(gi, c, scale * back[c]);
            }
        }
        Ok((logprob, grad))
    }

    fn tokenize_text(&self, text: &str) -> Result<Vec<TokenId>> {
        let ids: Vec<TokenId> = text
            .split_whitespace()
            .map(|w| {
                let lower = w.to_lowercase();
                self.word_ids
                    .get(&lower)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("word '{w}' is not in the toy vocabulary")))
            })
            .collect::<Result<_>>()?;
        if ids.is_empty() {
            return Err(Error::invalid("empty text"));
        }
        Ok(ids)
    }

    fn token_text(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    fn embed_token_rows(&self, ids: &[TokenId]) -> Result<Mat> {
        let mut out = Mat::zeros(ids.len(), self.dims.d_dec);
        for (r, &id) in ids.iter().enumerate() {
            if (id as usize) >= self.dims.vocab {
                return Err(Error::invalid(format!(
                    "token id {id} exceeds vocabulary size {}",
                    self.dims.vocab
                )));
            }
            out.row_mut(r).copy_from_slice(self.embed.row(id as usize));
        }
        Ok(out)
    }

    fn vocab_embeddings(&self) -> VocabEmbeddings {
        VocabEmbeddings {
            vectors: self.embed.clone(),
            tokens: self.words.clone(),
        }
    }

    fn vocab_size(&self) -> usize {
        self.dims.vocab
    }
}

impl JointScorer for ToyBackend {
    fn joint_embed_image(&self, image: &ImageSample) -> Result<JointEmbedding> {
        self.check_image(image, "joint_embed_image")?;
        let mut v = self.joint_img_w.matvec(image.pixels.data());
        for (a, &b) in v.iter_mut().zip(&self.joint_img_b) {
            *a += b;
        }
        Ok(JointEmbedding::raw(v))
    }

    fn joint_embed_text(&self, text: &str) -> Result<JointEmbedding> {
        let ids = self.tokenize_text(text)?;
        let mut v = vec![0.0; self.dims.d_j];
        for id in ids {
            for (a, &t) in v.iter_mut().zip(self.joint_txt.row(id as usize)) {
                *a += t;
            }
        }
        Ok(JointEmbedding::raw(v))
    }
}

impl LatentAutoencoder for ToyBackend {
    fn ae_encode(&self, image: &ImageSample) -> Result<FeatureMapSet> {
        self.check_image(image, "ae_encode")?;
        let mut f = self.ae_rotation.matvec(image.pixels.data());
        for (a, &b) in f.iter_mut().zip(&self.ae_bias) {
            *a += b;
        }
        let d = &self.dims;
        Ok(FeatureMapSet {
            grid: Grid3::from_vec(d.latent_h, d.latent_w, d.latent_c, f)?,
        })
    }

    fn ae_decode(&self, fmap: &FeatureMapSet) -> Result<ImageSample> {
        let d = &self.dims;
        let g = &fmap.grid;
        if g.height != d.latent_h || g.width != d.latent_w || g.channels != d.latent_c {
            return Err(Error::shape(
                "ae_decode",
                format!("{}x{}x{}", d.latent_h, d.latent_w, d.latent_c),
                g.shape_string(),
            ));
        }
        let centered: Vec<Scalar> = g
            .data()
            .iter()
            .zip(&self.ae_bias)
            .map(|(&f, &b)| f - b)
            .collect();
        let mut x = self.ae_rotation.matvec_transposed(&centered);
        for v in x.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        ImageSample::new("", Grid3::from_vec(d.image_h, d.image_w, d.image_c, x)?)
    }
}

impl Backend for ToyBackend {
    fn dims(&self) -> &DimSpec {
        &self.dims
    }

    fn parameter_blob(&self) -> Vec<u8> {
        let p = &self.params;
        let d = &self.dims;
        let img = d.image_dim();
        let latent = d.latent_dim();
        let mut w = BlobWriter::new();
        w.push_f32("enc.weight", &[d.visual_slots * d.d_dec, img], p.enc_weight.iter().copied());
        w.push_f32("enc.bias", &[d.visual_slots, d.d_dec], p.enc_bias.iter().copied());
        w.push_f32("ae.rotation", &[latent, img], p.ae_rotation.iter().map(|&v| v as f32));
        w.push_f32("ae.bias", &[latent], p.ae_bias.iter().copied());
        w.push_f32("dec.embed", &[d.vocab, d.d_dec], p.dec_embed.iter().copied());
        w.push_f32("dec.mix", &[d.d_dec, d.d_dec], p.dec_mix.iter().copied());
        w.push_f32("dec.recur", &[d.d_dec, d.d_dec], p.dec_recur.iter().copied());
        w.push_f32("dec.pos", &[d.max_len, d.d_dec], p.dec_pos.iter().copied());
        w.push_f32("dec.out_w", &[d.vocab, d.d_dec], p.dec_out_w.iter().copied());
        w.push_f32("dec.out_b", &[d.vocab], p.dec_out_b.iter().copied());
        w.push_f32("joint.img_w", &[d.d_j, img], p.joint_img_w.iter().copied());
        w.push_f32("joint.img_b", &[d.d_j], p.joint_img_b.iter().copied());
        w.push_f32("joint.txt", &[d.vocab, d.d_j], p.joint_txt.iter().copied());
        w.finish()
    }
}
