//! Probes that explain learned prompt vectors: nearest-vocabulary-word
//! retrieval and first-token generation.

use serde::Serialize;

use crate::backend::{BackendBundle, DecodeMode};
use crate::error::{Error, Result};
use crate::math::squared_distance;
use crate::prompt::{ComposedInput, PromptState};
use crate::{Mat, Scalar};

/// The decoder's token-embedding table with its token strings.
#[derive(Debug, Clone)]
pub struct VocabEmbeddings {
    pub vectors: Mat,
    pub tokens: Vec<String>,
}

impl VocabEmbeddings {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }
}

/// One probed prompt vector.
#[derive(Debug, Clone, Serialize)]
pub struct PromptInterpretation {
    pub index: usize,
    /// Nearest vocabulary token by Euclidean distance.
    pub retrieved: String,
    pub distance: Scalar,
    /// Highest-probability first token when the vector is fed as the
    /// sole decoder slot.
    pub generated: String,
    pub probability: Scalar,
}

/// Nearest vocabulary token to `vec` by Euclidean distance; ties break
/// to the lowest token id.
pub fn nearest_word(vec: &[Scalar], vocab: &VocabEmbeddings) -> Result<(String, Scalar)> {
    if vocab.is_empty() {
        return Err(Error::invalid("empty vocabulary"));
    }
    if vocab.vectors.cols() != vec.len() {
        return Err(Error::shape(
            "nearest_word",
            format!("dimension {}", vocab.vectors.cols()),
            format!("dimension {}", vec.len()),
        ));
    }
    let mut best = (0usize, Scalar::INFINITY);
    for (i, row) in vocab.vectors.iter_rows().enumerate() {
        let d2 = squared_distance(row, vec);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    Ok((display_token(&vocab.tokens[best.0], best.0), best.1.sqrt()))
}

/// Feeds a single vector as the sole decoder slot and returns the
/// argmax first-step token with its probability.
pub fn generate_from_prompt(
    vec: &[Scalar],
    bundle: &BackendBundle,
) -> Result<(String, Scalar)> {
    let slot = Mat::from_vec(1, vec.len(), vec.to_vec())?;
    let input = ComposedInput::new(slot, 0..1)?;
    let cap = bundle.model().decode(&input, DecodeMode::Greedy, 1, 1.0, 0)?;
    let id = cap.seq.tokens[0];
    let word = bundle
        .model()
        .token_text(id)
        .map(|t| display_token(t, id as usize))
        .unwrap_or_else(|| format!("{id} (N/A)"));
    Ok((word, cap.logprobs[0].exp()))
}

/// Applies both probes to every prompt vector, in vector order.
pub fn interpret_prompt(
    state: &PromptState,
    bundle: &BackendBundle,
) -> Result<Vec<PromptInterpretation>> {
    let vocab = bundle.model().vocab_embeddings();
    let lifted = state.lifted();
    let mut rows = Vec::with_capacity(state.len());
    for i in 0..state.len() {
        let vec = lifted.row(i);
        let (retrieved, distance) = nearest_word(vec, &vocab)?;
        let (generated, probability) = generate_from_prompt(vec, bundle)?;
        rows.push(PromptInterpretation {
            index: i,
            retrieved,
            distance,
            generated,
            probability,
        });
    }
    Ok(rows)
}

/// Renders the probe table as aligned plain text.
pub fn render_table(rows: &[PromptInterpretation]) -> String {
    let mut out = String::from("#  retrieval            generate\n");
    for r in rows {
        out.push_str(&format!(
            "{:<2} {:<20} {} ({:.4})\n",
            r.index + 1,
            format!("{} ({:.4})", r.retrieved, r.distance),
            r.generated,
            r.probability,
        ));
    }
    out
}

/// Tokens without printable content are rendered as their id with an
/// N/A marker.
fn display_token(token: &str, id: usize) -> String {
    let printable = !token.is_empty()
        && token
            .chars()
            .all(|c| c.is_ascii_graphic() || c == ' ');
    if printable {
        token.to_string()
    } else {
        format!("{id} (N/A)")
    }
}
