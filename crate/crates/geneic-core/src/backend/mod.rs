//! Model contracts: the four frozen-model roles the pipeline is
//! written against, plus the bundle that carries them.
//!
//! The roles mirror a captioning stack: a visual encoder that projects
//! an image into decoder slot space, an autoregressive caption decoder
//! that exposes per-step log-probabilities and gradients w.r.t. its
//! prompt slots, a joint image–text scorer, and a latent autoencoder
//! whose channel grid supports attribute transfer. Backends are frozen:
//! nothing in the pipeline may mutate their parameters, and
//! [`BackendBundle::digest`] recomputes a SHA-256 over the parameter
//! blob so tests can assert exactly that.

pub mod blob;
pub mod toy;

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::interpret::VocabEmbeddings;
use crate::math::norm_l2;
use crate::prompt::ComposedInput;
use crate::{Mat, Scalar};

/// Token id in the decoder vocabulary.
pub type TokenId = u32;

/// Dense rank-3 grid with (height, width, channels) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    data: Vec<Scalar>,
}

impl Grid3 {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Grid3 {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<Scalar>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                "grid construction",
                format!("{height}x{width}x{channels}"),
                format!("{} values", data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("grid values".into()));
        }
        Ok(Grid3 {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, k: usize) -> usize {
        (u * self.width + v) * self.channels + k
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, k: usize) -> Scalar {
        self.data[self.index(u, v, k)]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, k: usize, x: Scalar) {
        let i = self.index(u, v, k);
        self.data[i] = x;
    }

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Grid3) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// An input image: pixel grid with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub pixels: Grid3,
}

impl ImageSample {
    pub fn new(id: impl Into<String>, pixels: Grid3) -> Result<Self> {
        if !pixels.data().iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(ImageSample {
            id: id.into(),
            pixels,
        })
    }
}

/// Visual content projected into decoder slot space: q rows of width
/// d_dec, ready for concatenation with prompt vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEmbedding {
    pub tokens: Mat,
}

/// A decoded token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub tokens: Vec<TokenId>,
    pub eos_terminated: bool,
}

/// How a caption was decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Sampled,
}

/// A decoded caption with its per-token log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionSample {
    pub seq: TokenSeq,
    pub text: String,
    pub logprobs: Vec<Scalar>,
    pub mode: DecodeMode,
}

impl CaptionSample {
    /// Sum of the per-token log-probabilities.
    pub fn sequence_logprob(&self) -> Scalar {
        self.logprobs.iter().sum()
    }
}

/// A vector in the shared image–text scoring space.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbedding {
    pub vec: Vec<Scalar>,
    pub normalized: bool,
}

impl JointEmbedding {
    pub fn raw(vec: Vec<Scalar>) -> Self {
        JointEmbedding {
            vec,
            normalized: false,
        }
    }

    /// L2-normalized copy; errors on zero norm.
    pub fn normalized(&self) -> Result<JointEmbedding> {
        let v = crate::math::normalized(&self.vec)?;
        Ok(JointEmbedding {
            vec: v,
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    pub fn norm(&self) -> Scalar {
        norm_l2(&self.vec)
    }
}

/// Latent channel grid produced by the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    pub grid: Grid3,
}

/// Model dimensions shared by the four roles of one backend.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DimSpec {
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    /// Vocabulary size, terminator included. Must be at least 4.
    pub vocab: usize,
    /// Decoder slot width.
    pub d_dec: usize,
    /// Joint-space dimension.
    pub d_j: usize,
    /// Number of visual slots produced by the encoder.
    pub visual_slots: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub latent_c: usize,
    /// Decoder position-table capacity; generation past it reuses the
    /// last position row.
    pub max_len: usize,
}

impl Default for DimSpec {
    fn default() -> Self {
        DimSpec {
            image_h: 8,
            image_w: 8,
            image_c: 1,
            vocab: 16,
            d_dec: 8,
            d_j: 8,
            visual_slots: 2,
            latent_h: 4,
            latent_w: 4,
            latent_c: 8,
            max_len: 5,
        }
    }
}

impl DimSpec {
    pub fn image_dim(&self) -> usize {
        self.image_h * self.image_w * self.image_c
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_h * self.latent_w * self.latent_c
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.image_h,
            self.image_w,
            self.image_c,
            self.vocab,
            self.d_dec,
            self.d_j,
            self.visual_slots,
            self.latent_h,
            self.latent_w,
            self.latent_c,
            self.max_len,
        ]
        .iter()
        .all(|&d| d > 0);
        if !all_positive {
            return Err(Error::invalid("all model dimensions must be positive"));
        }
        if self.vocab < 4 {
            return Err(Error::invalid(
                "vocabulary must hold the terminator plus at least 3 content tokens",
            ));
        }
        if self.latent_dim() < self.image_dim() {
            return Err(Error::invalid(format!(
                "latent grid ({}) must be at least as large as the image ({}) for lossless reconstruction",
                self.latent_dim(),
                self.image_dim()
            )));
        }
        Ok(())
    }
}

/// Image → decoder-space visual slots.
pub trait VisualEncoder {
    fn encode_image(&self, image: &ImageSample) -> Result<VisualEmbedding>;
}

/// Autoregressive caption decoder over composed slot inputs.
pub trait CaptionDecoder {
    /// Decodes a caption. Greedy mode takes the per-step argmax with
    /// ties broken by the lowest token id; sampled mode draws from
    /// softmax(logits/temperature) using the given seed.
    fn decode(
        &self,
        input: &ComposedInput,
        mode: DecodeMode,
        max_len: usize,
        temperature: Scalar,
        rng_seed: u64,
    ) -> Result<CaptionSample>;

    /// Log-probability of `tokens` under the decoder plus its gradient
    /// with respect to the prompt block of `input`. The returned matrix
    /// has one row per prompt slot.
    fn sequence_logprob_grad(&self, input: &ComposedInput, tokens: &TokenSeq) -> Result<(Scalar, Mat)> {
        self.sequence_logprob_grad_tempered(input, tokens, 1.0)
    }

    /// Same as [`Self::sequence_logprob_grad`] for the tempered
    /// distribution softmax(logits/temperature), the distribution
    /// sampled decoding actually draws from.
    fn sequence_logprob_grad_tempered(
        &self,
        input: &ComposedInput,
        tokens: &TokenSeq,
        temperature: Scalar,
    ) -> Result<(Scalar, Mat)>;

    /// Splits text into vocabulary token ids; errors on unknown words.
    fn tokenize_text(&self, text: &str) -> Result<Vec<TokenId>>;

    fn token_text(&self, id: TokenId) -> Option<&str>;

    /// Embedding-table rows for the given ids.
    fn embed_token_rows(&self, ids: &[TokenId]) -> Result<Mat>;

    /// Copy of the full token-embedding table with its token strings.
    fn vocab_embeddings(&self) -> VocabEmbeddings;

    fn vocab_size(&self) -> usize;
}

/// Image/text → joint scoring space. Embeddings are returned raw; the
/// caller applies normalization where the math requires it.
pub trait JointScorer {
    fn joint_embed_image(&self, image: &ImageSample) -> Result<JointEmbedding>;
    fn joint_embed_text(&self, text: &str) -> Result<JointEmbedding>;
}

/// Latent autoencoder over the channel grid.
pub trait LatentAutoencoder {
    fn ae_encode(&self, image: &ImageSample) -> Result<FeatureMapSet>;
    fn ae_decode(&self, fmap: &FeatureMapSet) -> Result<ImageSample>;
}

/// One frozen backend implementing all four roles with consistent
/// dimensions.
pub trait Backend:
    VisualEncoder + CaptionDecoder + JointScorer + LatentAutoencoder + Send + Sync
{
    fn dims(&self) -> &DimSpec;

    /// Canonical serialization of every parameter; the digest substrate.
    fn parameter_blob(&self) -> Vec<u8>;
}

/// Shared handle to a frozen backend.
#[derive(Clone)]
pub struct BackendBundle {
    model: Arc<dyn Backend>,
}

impl BackendBundle {
    pub fn new(model: Arc<dyn Backend>) -> Self {
        BackendBundle { model }
    }

    pub fn model(&self) -> &dyn Backend {
        self.model.as_ref()
    }

    pub fn dims(&self) -> &DimSpec {
        self.model.dims()
    }

    /// SHA-256 over the parameter blob, recomputed from the live
    /// parameters on every call.
    pub fn digest(&self) -> [u8; 32] {
        blob::sha256(&self.model.parameter_blob())
    }

    pub fn digest_hex(&self) -> String {
        let d = self.digest();
        let mut s = String::with_capacity(64);
        for b in d {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

impl std::fmt::Debug for BackendBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendBundle")
            .field("dims", self.model.dims())
            .field("digest", &self.digest_hex())
            .finish()
    }
}

/// Builds the deterministic toy backend for a seed and dimension spec.
pub fn build_toy_backend(seed: u64, dims: DimSpec) -> Result<BackendBundle> {
    let params = toy::ToyParams::seeded(seed, dims)?;
    Ok(BackendBundle::new(Arc::new(toy::ToyBackend::from_params(params)?)))
}
