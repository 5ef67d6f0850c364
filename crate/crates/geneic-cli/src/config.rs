//! Run configuration: a TOML file with `[data]`, `[backend]`, `[train]`
//! and `[metrics]` sections. Command-line flags override file values;
//! the `GENEIC_SEED` environment variable is the seed fallback when
//! neither a flag nor the file sets one. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geneic_core::backend::{build_toy_backend, BackendBundle, DimSpec};
use geneic_core::trainer::TrainConfig;
use serde::Deserialize;

pub const SEED_ENV: &str = "GENEIC_SEED";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Corpus manifest: JSON lines of {"id", "path"} with optional
    /// {"captions": [...]} for evaluation corpora.
    pub corpus: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// Backend selector; only "toy" is built in.
    pub kind: String,
    pub seed: u64,
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub vocab: usize,
    pub d_dec: usize,
    pub d_j: usize,
    pub visual_slots: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub latent_c: usize,
    pub max_len: usize,
}

impl Default for BackendSection {
    fn default() -> Self {
        let d = DimSpec::default();
        BackendSection {
            kind: "toy".into(),
            seed: 0,
            image_h: d.image_h,
            image_w: d.image_w,
            image_c: d.image_c,
            vocab: d.vocab,
            d_dec: d.d_dec,
            d_j: d.d_j,
            visual_slots: d.visual_slots,
            latent_h: d.latent_h,
            latent_w: d.latent_w,
            latent_c: d.latent_c,
            max_len: d.max_len,
        }
    }
}

impl BackendSection {
    pub fn dims(&self) -> DimSpec {
        DimSpec {
            image_h: self.image_h,
            image_w: self.image_w,
            image_c: self.image_c,
            vocab: self.vocab,
            d_dec: self.d_dec,
            d_j: self.d_j,
            visual_slots: self.visual_slots,
            latent_h: self.latent_h,
            latent_w: self.latent_w,
            latent_c: self.latent_c,
            max_len: self.max_len,
        }
    }

    pub fn build(&self) -> Result<BackendBundle> {
        match self.kind.as_str() {
            "toy" => Ok(build_toy_backend(self.seed, self.dims())?),
            other => bail!("unknown backend '{other}'; only 'toy' is built in"),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub clip_s_weight: f64,
}

impl Default for MetricsSection {
    fn default() -> Self {
        MetricsSection { clip_s_weight: 1.0 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub backend: BackendSection,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
}

impl RunConfig {
    /// Loads the config file (defaults when none is given) and applies
    /// the seed resolution order: flag, file, environment, default.
    pub fn load(path: Option<&Path>, seed_flag: Option<u64>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut file_sets_seed = false;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            cfg = toml::from_str(&text)
                .with_context(|| format!("invalid config file {}", p.display()))?;
            let raw: toml::Value = toml::from_str(&text)?;
            file_sets_seed = raw
                .get("train")
                .and_then(|t| t.get("seed"))
                .is_some();
        }
        if let Some(s) = seed_flag {
            cfg.train.seed = s;
        } else if !file_sets_seed {
            if let Ok(env) = std::env::var(SEED_ENV) {
                cfg.train.seed = env
                    .parse()
                    .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got '{env}'"))?;
            }
        }
        Ok(cfg)
    }

    pub fn corpus_path(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.data.corpus.clone())
            .context("no corpus manifest: pass --corpus or set [data].corpus in the config")
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.data.out_dir.clone())
            .context("no output directory: pass --out or set [data].out_dir in the config")
    }
}
