//! Learnable prompt vectors and decoder-input composition.
//!
//! The prompt block is the only trainable state in the pipeline. It is
//! stored as f32 (the checkpoint wire format) and lifted to f64 when
//! composed into decoder inputs, so save/load round-trips are bitwise.
//!
//! Checkpoint layout (`GIPV`): magic, version u32 LE, M u32 LE, d_dec
//! u32 LE, M·d_dec IEEE-754 32-bit LE row-major, step u64 LE.

use std::ops::Range;
use std::path::Path;

use crate::backend::{BackendBundle, VisualEmbedding};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::math::Matrix;
use crate::rng::GaussianSource;
use crate::{Mat, Scalar};

pub const PROMPT_MAGIC: &[u8; 4] = b"GIPV";
pub const PROMPT_VERSION: u32 = 1;

/// Default initialization scale of prompt entries.
pub const INIT_STD: f64 = 0.02;

/// The learnable prompt vectors plus the number of optimizer steps
/// applied to them.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState {
    vectors: Matrix<f32>,
    step: u64,
}

impl PromptState {
    pub fn new(vectors: Matrix<f32>, step: u64) -> Result<Self> {
        if !vectors.all_finite() {
            return Err(Error::NonFinite("prompt vectors".into()));
        }
        Ok(PromptState { vectors, step })
    }

    /// Number of prompt vectors (M).
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.vectors.cols()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn vectors(&self) -> &Matrix<f32> {
        &self.vectors
    }

    /// Prompt rows lifted into pipeline scalars.
    pub fn lifted(&self) -> Mat {
        Mat::from_vec(
            self.vectors.rows(),
            self.vectors.cols(),
            self.vectors.data().iter().map(|&v| v as Scalar).collect(),
        )
        .expect("shape preserved")
    }
}

/// A hand-written text prompt for the zero-shot baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPrompt {
    pub text: String,
}

impl TextPrompt {
    pub fn new(text: impl Into<String>) -> Self {
        TextPrompt { text: text.into() }
    }
}

/// Decoder input: visual slots followed by the prompt block.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedInput {
    pub slots: Mat,
    pub prompt_span: Range<usize>,
}

impl ComposedInput {
    pub fn new(slots: Mat, prompt_span: Range<usize>) -> Result<Self> {
        if prompt_span.start > prompt_span.end || prompt_span.end > slots.rows() {
            return Err(Error::invalid(format!(
                "prompt span {prompt_span:?} outside the {} slots",
                slots.rows()
            )));
        }
        Ok(ComposedInput { slots, prompt_span })
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_span.len()
    }
}

/// Draws M prompt vectors i.i.d. Gaussian(0, 0.02²), reproducibly.
pub fn init_prompt(m: usize, d_dec: usize, seed: u64) -> Result<PromptState> {
    init_prompt_with_std(m, d_dec, seed, INIT_STD)
}

pub fn init_prompt_with_std(m: usize, d_dec: usize, seed: u64, std: f64) -> Result<PromptState> {
    if d_dec == 0 {
        return Err(Error::invalid("prompt width must be positive"));
    }
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::invalid("init std must be finite and non-negative"));
    }
    let mut g = GaussianSource::new(seed);
    let data: Vec<f32> = (0..m * d_dec)
        .map(|_| (g.next_gaussian() * std) as f32)
        .collect();
    PromptState::new(Matrix::from_vec(m, d_dec, data)?, 0)
}

/// Concatenates visual slots with the prompt block (in that order).
pub fn compose_input(vis: &VisualEmbedding, prompt: &PromptState) -> Result<ComposedInput> {
    if !prompt.is_empty() && vis.tokens.cols() != prompt.width() {
        return Err(Error::shape(
            "compose_input",
            format!("prompt width {}", vis.tokens.cols()),
            format!("prompt width {}", prompt.width()),
        ));
    }
    let q = vis.tokens.rows();
    let slots = vis.tokens.vstack(&prompt.lifted())?;
    ComposedInput::new(slots, q..q + prompt.len())
}

/// Concatenates visual slots with the embedded tokens of a hand-written
/// text prompt.
pub fn compose_input_text(
    vis: &VisualEmbedding,
    tp: &TextPrompt,
    bundle: &BackendBundle,
) -> Result<ComposedInput> {
    let ids = bundle.model().tokenize_text(&tp.text)?;
    let rows = bundle.model().embed_token_rows(&ids)?;
    if vis.tokens.cols() != rows.cols() {
        return Err(Error::shape(
            "compose_input_text",
            format!("slot width {}", vis.tokens.cols()),
            format!("slot width {}", rows.cols()),
        ));
    }
    let q = vis.tokens.rows();
    let n = rows.rows();
    let slots = vis.tokens.vstack(&rows)?;
    ComposedInput::new(slots, q..q + n)
}

/// Serializes a prompt state into the checkpoint wire format.
pub fn encode_prompt(state: &PromptState) -> Vec<u8> {
    let m = state.len() as u32;
    let d = state.width() as u32;
    let mut out = Vec::with_capacity(16 + state.vectors().data().len() * 4 + 8);
    out.extend_from_slice(PROMPT_MAGIC);
    out.extend_from_slice(&PROMPT_VERSION.to_le_bytes());
    out.extend_from_slice(&m.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for &v in state.vectors().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&state.step().to_le_bytes());
    out
}

pub fn decode_prompt(bytes: &[u8]) -> Result<PromptState> {
    let need = |offset: u64, len: usize, what: &str| -> Result<()> {
        if (offset as usize) + len > bytes.len() {
            Err(Error::Format {
                offset: bytes.len() as u64,
                detail: format!("truncated while reading {what} at byte {offset}"),
            })
        } else {
            Ok(())
        }
    };
    need(0, 4, "magic")?;
    if &bytes[0..4] != PROMPT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            detail: "bad magic, expected GIPV".into(),
        });
    }
    need(4, 4, "version")?;
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != PROMPT_VERSION {
        return Err(Error::Format {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    need(8, 4, "row count")?;
    let m = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    need(12, 4, "width")?;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let value_bytes = m
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format {
            offset: 8,
            detail: "vector block size overflows".into(),
        })?;
    need(16, value_bytes, "prompt values")?;
    let mut data = Vec::with_capacity(m * d);
    for i in 0..m * d {
        let at = 16 + i * 4;
        data.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
    }
    let step_at = 16 + value_bytes;
    need(step_at as u64, 8, "step counter")?;
    let step = u64::from_le_bytes(bytes[step_at..step_at + 8].try_into().unwrap());
    if bytes.len() != step_at + 8 {
        return Err(Error::Format {
            offset: (step_at + 8) as u64,
            detail: format!("{} trailing bytes", bytes.len() - step_at - 8),
        });
    }
    if d == 0 {
        return Err(Error::Format {
            offset: 12,
            detail: "zero prompt width".into(),
        });
    }
    PromptState::new(Matrix::from_vec(m, d, data)?, step)
}

pub fn save_prompt(state: &PromptState, path: &Path) -> Result<()> {
    write_atomic(path, &encode_prompt(state))
}

pub fn load_prompt(path: &Path) -> Result<PromptState> {
    decode_prompt(&std::fs::read(path)?)
}
