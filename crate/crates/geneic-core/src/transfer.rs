//! Attribute transfer in the latent channel grid.
//!
//! Channels are scored for main-object saliency with a center-weighted
//! energy heuristic (subjects sit near the image center in this kind of
//! corpus), the top fraction is selected, and those channel slices are
//! swapped wholesale between the two images' grids before decoding.

use crate::backend::{BackendBundle, FeatureMapSet, ImageSample};
use crate::error::{Error, Result};
use crate::Scalar;

const SCORE_EPSILON: Scalar = 1e-8;

/// Per-channel saliency scores with the descending ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelScores {
    pub scores: Vec<Scalar>,
    /// Channel indices sorted by descending score; ties by lower index.
    pub ranking: Vec<usize>,
}

/// The channels to swap between a pair of grids.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    /// Sorted, duplicate-free channel indices.
    pub channels: Vec<usize>,
    pub fraction: Scalar,
}

impl TransferPlan {
    pub fn swap_count(&self) -> usize {
        self.channels.len()
    }
}

/// Scores channel `k` as Σ g(u,v)·|grid[u,v,k]| / (Σ |grid[u,v,k]| + ε)
/// where `g` is a centered 2-D Gaussian over the lattice with σ = l/4.
pub fn score_channels(fmap: &FeatureMapSet) -> ChannelScores {
    let g = &fmap.grid;
    let sigma = g.height as Scalar / 4.0;
    let cu = (g.height as Scalar - 1.0) / 2.0;
    let cv = (g.width as Scalar - 1.0) / 2.0;
    let mut weighted = vec![0.0; g.channels];
    let mut total = vec![0.0; g.channels];
    for u in 0..g.height {
        for v in 0..g.width {
            let du = u as Scalar - cu;
            let dv = v as Scalar - cv;
            let w = (-(du * du + dv * dv) / (2.0 * sigma * sigma)).exp();
            for k in 0..g.channels {
                let a = g.get(u, v, k).abs();
                weighted[k] += w * a;
                total[k] += a;
            }
        }
    }
    let scores: Vec<Scalar> = weighted
        .iter()
        .zip(&total)
        .map(|(&w, &t)| w / (t + SCORE_EPSILON))
        .collect();
    let mut ranking: Vec<usize> = (0..g.channels).collect();
    ranking.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    ChannelScores { scores, ranking }
}

/// Selects the top `round(fraction · c)` channels of the ranking.
pub fn plan_transfer(scores: &ChannelScores, fraction: Scalar) -> Result<TransferPlan> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "transfer fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let c = scores.scores.len();
    let take = (fraction * c as Scalar).round() as usize;
    let mut channels: Vec<usize> = scores.ranking[..take.min(c)].to_vec();
    channels.sort_unstable();
    Ok(TransferPlan { channels, fraction })
}

/// Replaces the planned channel slices of `f_i` with those of `f_j`;
/// inputs are untouched.
pub fn apply_transfer(
    f_i: &FeatureMapSet,
    f_j: &FeatureMapSet,
    plan: &TransferPlan,
) -> Result<FeatureMapSet> {
    if !f_i.grid.same_shape(&f_j.grid) {
        return Err(Error::shape(
            "apply_transfer",
            f_i.grid.shape_string(),
            f_j.grid.shape_string(),
        ));
    }
    if let Some(&bad) = plan.channels.iter().find(|&&k| k >= f_i.grid.channels) {
        return Err(Error::invalid(format!(
            "plan channel {bad} outside grid with {} channels",
            f_i.grid.channels
        )));
    }
    let mut out = f_i.grid.clone();
    for u in 0..out.height {
        for v in 0..out.width {
            for &k in &plan.channels {
                out.set(u, v, k, f_j.grid.get(u, v, k));
            }
        }
    }
    Ok(FeatureMapSet { grid: out })
}

/// Full pipeline for one pair: encode both, plan from the original's
/// grid, swap, decode.
pub fn make_transferred_image(
    x_i: &ImageSample,
    x_j: &ImageSample,
    bundle: &BackendBundle,
    fraction: Scalar,
) -> Result<ImageSample> {
    let f_i = bundle.model().ae_encode(x_i)?;
    let f_j = bundle.model().ae_encode(x_j)?;
    let plan = plan_transfer(&score_channels(&f_i), fraction)?;
    let swapped = apply_transfer(&f_i, &f_j, &plan)?;
    let mut out = bundle.model().ae_decode(&swapped)?;
    out.id = format!("{}~{}", x_i.id, x_j.id);
    Ok(out)
}
