//! Caption evaluation battery: n-gram metrics against references
//! (BLEU, ROUGE-L, CIDEr), diversity statistics, and the reference-free
//! joint-space score (CLIP-S). All metrics share one tokenizer:
//! lowercase, punctuation to spaces, split on whitespace.
//!
//! METEOR is declared in the report but not implemented (it needs
//! external synonym and stemming resources), so the field stays absent
//! rather than carrying a lookalike number.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendBundle, ImageSample};
use crate::error::{Error, Result};
use crate::Scalar;

/// ROUGE-L recall weighting, the captioning convention.
const ROUGE_BETA: Scalar = 1.2;
/// CIDEr n-gram orders.
const CIDER_MAX_N: usize = 4;

/// One generated caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub image_id: String,
    pub caption: String,
}

/// Reference captions per image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceSet {
    map: BTreeMap<String, Vec<String>>,
}

impl ReferenceSet {
    pub fn new(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        for (id, refs) in &map {
            if refs.is_empty() {
                return Err(Error::invalid(format!("image '{id}' has no references")));
            }
        }
        Ok(ReferenceSet { map })
    }

    pub fn get(&self, id: &str) -> Option<&[String]> {
        self.map.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// All reference sentences, flattened.
    pub fn all_sentences(&self) -> impl Iterator<Item = &String> {
        self.map.values().flatten()
    }
}

/// Lowercase, strip punctuation to spaces, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.chars()
        .flat_map(|c| c.to_lowercase())
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n && n > 0 {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn lookup_refs<'a>(refs: &'a ReferenceSet, id: &str) -> Result<&'a [String]> {
    refs.get(id)
        .ok_or_else(|| Error::invalid(format!("no references for image '{id}'")))
}

/// Corpus-level BLEU-1..max_n with clipped precision, geometric mean,
/// and the closest-reference brevity penalty.
pub fn bleu(cands: &[Candidate], refs: &ReferenceSet, max_n: usize) -> Result<Vec<Scalar>> {
    if cands.is_empty() || max_n == 0 {
        return Err(Error::invalid("bleu needs candidates and max_n >= 1"));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for cand in cands {
        let ctoks = tokenize(&cand.caption);
        let rtoks: Vec<Vec<String>> = lookup_refs(refs, &cand.image_id)?
            .iter()
            .map(|r| tokenize(r))
            .collect();
        cand_len += ctoks.len();
        // closest reference length; ties pick the shorter one
        ref_len += rtoks
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(ctoks.len()), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let ccounts = ngram_counts(&ctoks, n);
            let mut rmax: HashMap<&Vec<String>, usize> = HashMap::new();
            for r in &rtoks {
                for (g, c) in ngram_counts(r, n) {
                    let g_ref = ccounts.get_key_value(&g).map(|(k, _)| k);
                    if let Some(k) = g_ref {
                        let e = rmax.entry(k).or_insert(0);
                        *e = (*e).max(c);
                    }
                }
            }
            for (g, c) in &ccounts {
                totals[n - 1] += c;
                matches[n - 1] += (*c).min(rmax.get(g).copied().unwrap_or(0));
            }
        }
    }
    let bp = if cand_len == 0 {
        0.0
    } else if cand_len < ref_len {
        (1.0 - ref_len as Scalar / cand_len as Scalar).exp()
    } else {
        1.0
    };
    let precisions: Vec<Scalar> = (0..max_n)
        .map(|i| {
            if totals[i] == 0 {
                0.0
            } else {
                matches[i] as Scalar / totals[i] as Scalar
            }
        })
        .collect();
    Ok((1..=max_n)
        .map(|k| {
            if precisions[..k].iter().any(|&p| p <= 0.0) {
                0.0
            } else {
                let log_mean: Scalar = precisions[..k].iter().map(|p| p.ln()).sum::<Scalar>() / k as Scalar;
                bp * log_mean.exp()
            }
        })
        .collect())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Corpus ROUGE-L: per pair an LCS F-measure, max over references,
/// mean over candidates.
pub fn rouge_l(cands: &[Candidate], refs: &ReferenceSet) -> Result<Scalar> {
    if cands.is_empty() {
        return Err(Error::invalid("rouge_l needs candidates"));
    }
    let beta2 = ROUGE_BETA * ROUGE_BETA;
    let mut sum = 0.0;
    for cand in cands {
        let ctoks = tokenize(&cand.caption);
        let mut best: Scalar = 0.0;
        for r in lookup_refs(refs, &cand.image_id)? {
            let rtoks = tokenize(r);
            if ctoks.is_empty() || rtoks.is_empty() {
                continue;
            }
            let lcs = lcs_len(&ctoks, &rtoks) as Scalar;
            let p = lcs / ctoks.len() as Scalar;
            let r_ = lcs / rtoks.len() as Scalar;
            let denom = r_ + beta2 * p;
            let f = if denom > 0.0 {
                (1.0 + beta2) * p * r_ / denom
            } else {
                0.0
            };
            best = best.max(f);
        }
        sum += best;
    }
    Ok(sum / cands.len() as Scalar)
}

type TfIdfVec = HashMap<Vec<String>, Scalar>;

fn tfidf_vector(tokens: &[String], n: usize, idf: &HashMap<Vec<String>, Scalar>, n_images: usize) -> TfIdfVec {
    let log_n = (n_images as Scalar).ln();
    ngram_counts(tokens, n)
        .into_iter()
        .map(|(g, c)| {
            let w = idf.get(&g).copied().unwrap_or(log_n); // unseen n-grams: df treated as 1
            (g, c as Scalar * w)
        })
        .collect()
}

fn cosine_sparse(a: &TfIdfVec, b: &TfIdfVec) -> Scalar {
    let dot: Scalar = a
        .iter()
        .filter_map(|(g, &x)| b.get(g).map(|&y| x * y))
        .sum();
    let na: Scalar = a.values().map(|x| x * x).sum::<Scalar>().sqrt();
    let nb: Scalar = b.values().map(|x| x * x).sum::<Scalar>().sqrt();
    if na <= 0.0 || nb <= 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Base CIDEr: TF-IDF weighted n-gram cosine for n = 1..4, averaged
/// over n and references, mean over images, times 10. Document
/// frequencies come from the evaluated images' reference sets.
pub fn cider(cands: &[Candidate], refs: &ReferenceSet) -> Result<Scalar> {
    if cands.is_empty() {
        return Err(Error::invalid("cider needs candidates"));
    }
    let mut seen = HashSet::new();
    for c in cands {
        if !seen.insert(c.image_id.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate candidate for image '{}'",
                c.image_id
            )));
        }
    }
    let n_images = cands.len();
    if n_images < 2 {
        return Err(Error::invalid(
            "cider needs at least 2 images: IDF requires a document set",
        ));
    }

    // document frequency per n-gram order over the reference sets
    let mut idf: Vec<HashMap<Vec<String>, Scalar>> = vec![HashMap::new(); CIDER_MAX_N];
    for cand in cands {
        let rtoks: Vec<Vec<String>> = lookup_refs(refs, &cand.image_id)?
            .iter()
            .map(|r| tokenize(r))
            .collect();
        for n in 1..=CIDER_MAX_N {
            let mut in_image: HashSet<Vec<String>> = HashSet::new();
            for r in &rtoks {
                in_image.extend(ngram_counts(r, n).into_keys());
            }
            for g in in_image {
                *idf[n - 1].entry(g).or_insert(0.0) += 1.0;
            }
        }
    }
    for table in idf.iter_mut() {
        for v in table.values_mut() {
            *v = (n_images as Scalar / v.max(1.0)).ln();
        }
    }

    let mut total = 0.0;
    for cand in cands {
        let ctoks = tokenize(&cand.caption);
        let rlist = lookup_refs(refs, &cand.image_id)?;
        let mut image_score = 0.0;
        for n in 1..=CIDER_MAX_N {
            let cvec = tfidf_vector(&ctoks, n, &idf[n - 1], n_images);
            let mut ref_sum = 0.0;
            for r in rlist {
                let rvec = tfidf_vector(&tokenize(r), n, &idf[n - 1], n_images);
                ref_sum += cosine_sparse(&cvec, &rvec);
            }
            image_score += ref_sum / rlist.len() as Scalar / CIDER_MAX_N as Scalar;
        }
        total += image_score;
    }
    Ok(10.0 * total / n_images as Scalar)
}

/// Diversity statistics of a candidate set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    /// Distinct token count over all candidates.
    pub vocab: usize,
    /// Percentage of candidate sentences absent from the comparison
    /// set (token-sequence equality after tokenization).
    pub pct_novel: Scalar,
    pub mean_length: Scalar,
    /// Percentage of distinct candidate sentences.
    pub pct_unique: Scalar,
}

pub fn diversity(cands: &[String], train_refs: &[String]) -> Result<DiversityReport> {
    if cands.is_empty() {
        return Err(Error::invalid("diversity needs candidates"));
    }
    let tokenized: Vec<Vec<String>> = cands.iter().map(|c| tokenize(c)).collect();
    let vocab = tokenized
        .iter()
        .flatten()
        .collect::<HashSet<_>>()
        .len();
    let known: HashSet<Vec<String>> = train_refs.iter().map(|r| tokenize(r)).collect();
    let novel = tokenized.iter().filter(|t| !known.contains(*t)).count();
    let distinct = tokenized.iter().collect::<HashSet<_>>().len();
    let n = cands.len() as Scalar;
    Ok(DiversityReport {
        vocab,
        pct_novel: 100.0 * novel as Scalar / n,
        mean_length: tokenized.iter().map(Vec::len).sum::<usize>() as Scalar / n,
        pct_unique: 100.0 * distinct as Scalar / n,
    })
}

/// Mean of 100·w·max(0, cos(image, caption)) over aligned pairs.
pub fn clip_s(
    images: &[ImageSample],
    cands: &[String],
    bundle: &BackendBundle,
    w: Scalar,
) -> Result<Scalar> {
    if images.len() != cands.len() || images.is_empty() {
        return Err(Error::invalid(format!(
            "clip_s needs equal nonempty lists, got {} images and {} captions",
            images.len(),
            cands.len()
        )));
    }
    let mut sum = 0.0;
    for (img, caption) in images.iter().zip(cands) {
        let v = bundle.model().joint_embed_image(img)?;
        let s = bundle.model().joint_embed_text(caption)?;
        let cos = crate::math::cosine(&v.vec, &s.vec)?;
        sum += 100.0 * w * cos.max(0.0);
    }
    Ok(sum / images.len() as Scalar)
}

/// The full evaluation table.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub bleu1: Scalar,
    pub bleu2: Scalar,
    pub bleu3: Scalar,
    pub bleu4: Scalar,
    pub rouge_l: Scalar,
    pub cider: Scalar,
    /// Not implemented; stays absent from the serialized report.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meteor: Option<Scalar>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_s: Option<Scalar>,
    pub vocab: usize,
    pub pct_novel: Scalar,
    pub mean_length: Scalar,
    pub pct_unique: Scalar,
    pub n_candidates: usize,
    pub n_reference_images: usize,
}

/// Computes every metric; the joint-space score is included when the
/// aligned images and a backend are supplied.
pub fn evaluate_all(
    cands: &[Candidate],
    refs: &ReferenceSet,
    clip: Option<(&[ImageSample], &BackendBundle, Scalar)>,
) -> Result<MetricReport> {
    let b = bleu(cands, refs, 4)?;
    let rouge = rouge_l(cands, refs)?;
    let cid = cider(cands, refs)?;
    let texts: Vec<String> = cands.iter().map(|c| c.caption.clone()).collect();
    let train_refs: Vec<String> = refs.all_sentences().cloned().collect();
    let div = diversity(&texts, &train_refs)?;
    let clip_score = match clip {
        Some((images, bundle, w)) => Some(clip_s(images, &texts, bundle, w)?),
        None => None,
    };
    Ok(MetricReport {
        bleu1: b[0],
        bleu2: b[1],
        bleu3: b[2],
        bleu4: b[3],
        rouge_l: rouge,
        cider: cid,
        meteor: None,
        clip_s: clip_score,
        vocab: div.vocab,
        pct_novel: div.pct_novel,
        mean_length: div.mean_length,
        pct_unique: div.pct_unique,
        n_candidates: cands.len(),
        n_reference_images: refs.len(),
    })
}
