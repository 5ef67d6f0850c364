//! Corpus manifests and JSON-lines caption files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geneic_core::backend::ImageSample;
use geneic_core::fsutil::write_atomic;
use geneic_core::metrics::{Candidate, ReferenceSet};
use serde::{Deserialize, Serialize};

use crate::imageio::load_image;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<Vec<String>>,
}

/// A loaded corpus: images in manifest order plus any reference
/// captions the manifest carried.
pub struct Corpus {
    pub images: Vec<ImageSample>,
    pub captions: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    pub fn image(&self, id: &str) -> Option<&ImageSample> {
        self.images.iter().find(|i| i.id == id)
    }
}

/// Reads a JSON-lines manifest and loads every image. Missing files
/// are collected into one error listing each of them.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(manifest_path)
        .with_context(|| format!("cannot read manifest {}", manifest_path.display()))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line)
            .with_context(|| format!("manifest line {}", lineno + 1))?;
        if !seen.insert(entry.id.clone()) {
            bail!("duplicate id '{}' in manifest", entry.id);
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        bail!("manifest {} lists no images", manifest_path.display());
    }

    let resolve = |p: &str| -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            dir.join(path)
        }
    };
    let missing: Vec<String> = entries
        .iter()
        .map(|e| resolve(&e.path))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing image files:\n  {}", missing.join("\n  "));
    }

    let mut images = Vec::with_capacity(entries.len());
    let mut captions = BTreeMap::new();
    for e in &entries {
        images.push(load_image(&resolve(&e.path), &e.id)?);
        if let Some(c) = &e.captions {
            captions.insert(e.id.clone(), c.clone());
        }
    }
    Ok(Corpus { images, captions })
}

pub fn save_candidates(cands: &[Candidate], path: &Path) -> Result<()> {
    let mut out = String::new();
    for c in cands {
        out.push_str(&serde_json::to_string(c)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    Ok(())
}

pub fn load_candidates(path: &Path) -> Result<Vec<Candidate>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read candidates {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .with_context(|| format!("candidates line {}", lineno + 1))?,
        );
    }
    if out.is_empty() {
        bail!("candidates file {} is empty", path.display());
    }
    Ok(out)
}

#[derive(Debug, Deserialize, Serialize)]
struct ReferenceLine {
    image_id: String,
    captions: Vec<String>,
}

pub fn load_references(path: &Path) -> Result<ReferenceSet> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read references {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ReferenceLine = serde_json::from_str(line)
            .with_context(|| format!("references line {}", lineno + 1))?;
        map.insert(r.image_id, r.captions);
    }
    Ok(ReferenceSet::new(map)?)
}

/// Builds a reference set from manifest captions.
pub fn references_from_corpus(corpus: &Corpus) -> Result<Option<ReferenceSet>> {
    if corpus.captions.is_empty() {
        return Ok(None);
    }
    Ok(Some(ReferenceSet::new(corpus.captions.clone())?))
}
