//! Corpus embedding, k-means clustering, and partner pairing.
//!
//! Stage one of the pipeline: the target-domain corpus is embedded in
//! the joint space, clustered with k-means (k-means++ seeding, Lloyd
//! iterations, deterministic for a fixed seed), and each image is
//! paired with its most similar same-cluster partner; the pair is the
//! substrate for attribute transfer. Pairing semantically close images
//! keeps swapped attributes meaningful instead of injecting unrelated
//! content.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{BackendBundle, ImageSample};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::math::squared_distance;
use crate::rng::SplitMix64;
use crate::{Mat, Scalar};

/// Embedded corpus: one L2-normalized joint-space row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    ids: Vec<String>,
    embeddings: Mat,
}

impl CorpusIndex {
    /// Rows must be unit-norm within 1e-6; ids must be unique.
    pub fn from_rows(ids: Vec<String>, embeddings: Mat) -> Result<Self> {
        if ids.len() != embeddings.rows() {
            return Err(Error::shape(
                "corpus index",
                format!("{} ids", embeddings.rows()),
                format!("{} ids", ids.len()),
            ));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate image id '{id}'")));
            }
        }
        for (i, row) in embeddings.iter_rows().enumerate() {
            let n = crate::math::norm_l2(row);
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "corpus row {i} has norm {n}, expected 1"
                )));
            }
        }
        Ok(CorpusIndex { ids, embeddings })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &Mat {
        &self.embeddings
    }

    pub fn row(&self, i: usize) -> &[Scalar] {
        self.embeddings.row(i)
    }
}

/// K-means result over a corpus index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Mat,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn new(labels: Vec<usize>, centroids: Mat, k: usize) -> Result<Self> {
        if centroids.rows() != k {
            return Err(Error::shape(
                "cluster assignment",
                format!("{k} centroids"),
                format!("{}", centroids.rows()),
            ));
        }
        let mut counts = vec![0usize; k];
        for &l in &labels {
            if l >= k {
                return Err(Error::invalid(format!("label {l} out of range for k={k}")));
            }
            counts[l] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::invalid("empty cluster in assignment"));
        }
        Ok(ClusterAssignment {
            labels,
            centroids,
            k,
        })
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

/// An epoch's worth of (original, partner) index pairs, batched.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub batch_size: usize,
}

/// Embeds every image and normalizes the rows; order is preserved.
pub fn embed_corpus(images: &[ImageSample], bundle: &BackendBundle) -> Result<CorpusIndex> {
    if images.is_empty() {
        return Err(Error::invalid("cannot embed an empty corpus"));
    }
    let d_j = bundle.dims().d_j;
    let mut rows = Mat::zeros(images.len(), d_j);
    for (i, img) in images.iter().enumerate() {
        let e = bundle.model().joint_embed_image(img)?.normalized()?;
        rows.row_mut(i).copy_from_slice(&e.vec);
    }
    CorpusIndex::from_rows(images.iter().map(|x| x.id.clone()).collect(), rows)
}

fn assign_labels(index: &CorpusIndex, centroids: &Mat) -> Vec<usize> {
    index
        .embeddings
        .iter_rows()
        .map(|row| {
            let mut best = (0usize, Scalar::INFINITY);
            for (c, cent) in centroids.iter_rows().enumerate() {
                let d = squared_distance(row, cent);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect()
}

fn update_means(index: &CorpusIndex, labels: &[usize], centroids: &mut Mat) {
    let k = centroids.rows();
    let d = centroids.cols();
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k * d];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, &x) in sums[l * d..(l + 1) * d].iter_mut().zip(index.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            continue; // keep the stale centroid; repair handles it
        }
        for j in 0..d {
            centroids.set(c, j, sums[c * d + j] / counts[c] as Scalar);
        }
    }
}

/// Fills empty clusters by stealing the farthest point from the largest
/// cluster; the stolen point becomes the new centroid.
fn repair_empty(index: &CorpusIndex, labels: &mut [usize], centroids: &mut Mat) {
    let k = centroids.rows();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("k >= 1");
        let farthest = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == largest)
            .max_by(|(ia, _), (ib, _)| {
                let da = squared_distance(index.row(*ia), centroids.row(largest));
                let db = squared_distance(index.row(*ib), centroids.row(largest));
                da.partial_cmp(&db).unwrap().then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .expect("largest cluster is nonempty");
        labels[farthest] = empty;
        let row = index.row(farthest).to_vec();
        centroids.row_mut(empty).copy_from_slice(&row);
    }
}

/// Within-cluster sum of squared distances.
pub fn kmeans_objective(index: &CorpusIndex, labels: &[usize], centroids: &Mat) -> Scalar {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| squared_distance(index.row(i), centroids.row(l)))
        .sum()
}

fn kmeanspp_seed(index: &CorpusIndex, k: usize, rng: &mut SplitMix64) -> Mat {
    let n = index.len();
    let d = index.embeddings.cols();
    let mut chosen: Vec<usize> = vec![rng.next_below(n)];
    let mut dist2: Vec<Scalar> = (0..n)
        .map(|i| squared_distance(index.row(i), index.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: Scalar = dist2.iter().sum();
        let next = if total <= 0.0 {
            // all remaining mass is on duplicates of chosen points;
            // fall back to the lowest unchosen index
            (0..n)
                .find(|i| !chosen.contains(i))
                .unwrap_or(chosen[chosen.len() - 1])
        } else {
            let target = rng.next_f64() * total;
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (i, &w) in dist2.iter().enumerate() {
                cum += w;
                if target < cum {
                    pick = i;
                    break;
                }
            }
            pick
        };
        chosen.push(next);
        for i in 0..n {
            let d2 = squared_distance(index.row(i), index.row(next));
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
        }
    }
    let mut centroids = Mat::zeros(k, d);
    for (c, &i) in chosen.iter().enumerate() {
        let row = index.row(i).to_vec();
        centroids.row_mut(c).copy_from_slice(&row);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding, run to a label fixpoint or
/// `max_iter`. Deterministic for a fixed seed.
pub fn cluster_corpus(
    index: &CorpusIndex,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterAssignment> {
    let n = index.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "k must satisfy 1 <= k <= {n}, got {k}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut centroids = kmeanspp_seed(index, k, &mut rng);
    let mut labels = assign_labels(index, &centroids);
    let mut prev_obj = Scalar::INFINITY;
    for _ in 0..max_iter {
        update_means(index, &labels, &mut centroids);
        repair_empty(index, &mut labels, &mut centroids);
        let new_labels = assign_labels(index, &centroids);
        let obj = kmeans_objective(index, &new_labels, &centroids);
        debug_assert!(
            obj <= prev_obj * (1.0 + 1e-12) + 1e-12,
            "objective increased: {prev_obj} -> {obj}"
        );
        prev_obj = obj;
        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }
    update_means(index, &labels, &mut centroids);
    repair_empty(index, &mut labels, &mut centroids);
    ClusterAssignment::new(labels, centroids, k)
}

/// Default cluster count for a corpus of `n` images.
pub fn default_k(n: usize) -> usize {
    (n / 50).max(2).min(n.max(1))
}

/// Most cosine-similar same-cluster partner of `i`; ties break to the
/// lowest index. Errors when the cluster is a singleton.
pub fn select_partner(
    i: usize,
    assignment: &ClusterAssignment,
    index: &CorpusIndex,
) -> Result<usize> {
    let cluster = assignment.labels[i];
    let mut best: Option<(usize, Scalar)> = None;
    for (j, &l) in assignment.labels.iter().enumerate() {
        if j == i || l != cluster {
            continue;
        }
        // rows are unit-norm, so the dot product is the cosine
        let cos = crate::math::dot(index.row(i), index.row(j));
        match best {
            Some((_, b)) if cos <= b => {}
            _ => best = Some((j, cos)),
        }
    }
    best.map(|(j, _)| j).ok_or(Error::NoPartner { index: i, cluster })
}

/// Nearest neighbor over the whole corpus, excluding `i` itself. The
/// fallback when `i`'s cluster is a singleton.
pub fn global_nearest(i: usize, index: &CorpusIndex) -> Result<usize> {
    let mut best: Option<(usize, Scalar)> = None;
    for j in 0..index.len() {
        if j == i {
            continue;
        }
        let cos = crate::math::dot(index.row(i), index.row(j));
        match best {
            Some((_, b)) if cos <= b => {}
            _ => best = Some((j, cos)),
        }
    }
    best.map(|(j, _)| j)
        .ok_or_else(|| Error::invalid("corpus of one image has no neighbors"))
}

/// Builds an epoch of pair batches: every image appears as the original
/// of exactly one pair, the pair order is shuffled by `seed`, and the
/// last batch may be short. Singleton clusters fall back to the global
/// nearest neighbor.
pub fn build_pair_batches(
    assignment: &ClusterAssignment,
    index: &CorpusIndex,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<PairBatch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let n = index.len();
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let j = match select_partner(i, assignment, index) {
            Ok(j) => j,
            Err(Error::NoPartner { .. }) => global_nearest(i, index)?,
            Err(e) => return Err(e),
        };
        pairs.push((i, j));
    }
    let mut rng = SplitMix64::new(seed);
    rng.shuffle(&mut pairs);
    Ok(pairs
        .chunks(batch_size)
        .map(|chunk| PairBatch {
            pairs: chunk.to_vec(),
            batch_size,
        })
        .collect())
}

// ── persistence ──────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct IndexManifest {
    ids: Vec<String>,
    embedding_file: String,
    rows: usize,
    cols: usize,
}

/// Writes the JSON manifest plus the raw f32 LE row-major embedding
/// file (named by `embedding_file`, created beside the manifest).
pub fn save_corpus_index(index: &CorpusIndex, manifest_path: &Path, embedding_file: &str) -> Result<()> {
    let manifest = IndexManifest {
        ids: index.ids.clone(),
        embedding_file: embedding_file.to_string(),
        rows: index.embeddings.rows(),
        cols: index.embeddings.cols(),
    };
    let mut raw = Vec::with_capacity(index.embeddings.data().len() * 4);
    for &v in index.embeddings.data() {
        raw.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    write_atomic(&dir.join(embedding_file), &raw)?;
    write_atomic(manifest_path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

pub fn load_corpus_index(manifest_path: &Path) -> Result<CorpusIndex> {
    let manifest: IndexManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let raw = std::fs::read(dir.join(&manifest.embedding_file))?;
    let expect = manifest.rows * manifest.cols * 4;
    if raw.len() != expect {
        return Err(Error::Format {
            offset: raw.len() as u64,
            detail: format!("embedding file holds {} bytes, expected {expect}", raw.len()),
        });
    }
    let data: Vec<Scalar> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as Scalar)
        .collect();
    CorpusIndex::from_rows(manifest.ids, Mat::from_vec(manifest.rows, manifest.cols, data)?)
}
