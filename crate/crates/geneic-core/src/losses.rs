//! Consistency objectives and the self-critical advantage.
//!
//! The attribute objective aligns the change direction of an image pair
//! in joint space with the change direction of their captions; the
//! semantic objective aligns each image with its own caption. Both are
//! cosine losses in [0, 2]; the reward view of the same quantities
//! feeds the self-critical advantage, with the greedy decode acting as
//! the sample's baseline.

use serde::Serialize;

use crate::backend::JointEmbedding;
use crate::error::{Error, Result};
use crate::math::cosine;
use crate::scalar::Real;
use crate::Scalar;

/// Deltas smaller than this are treated as degenerate; an undefined
/// cosine is skipped instead of fabricated.
pub const DELTA_EPSILON: Scalar = 1e-6;

/// Normalized difference directions of one original/transferred pair:
/// image-space delta and caption-space delta.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaPair {
    pub d_v: Vec<Scalar>,
    pub d_s: Vec<Scalar>,
    /// Set when either delta is too small for a meaningful direction.
    pub degenerate: bool,
}

/// Builds the delta pair Norm(v̄)−Norm(v̄′), Norm(s̄)−Norm(s̄′).
pub fn delta_pair(
    v: &JointEmbedding,
    v_prime: &JointEmbedding,
    s: &JointEmbedding,
    s_prime: &JointEmbedding,
) -> Result<DeltaPair> {
    let dim = v.dim();
    for (name, e) in [("v'", v_prime), ("s", s), ("s'", s_prime)] {
        if e.dim() != dim {
            return Err(Error::shape(
                "delta_pair",
                format!("dimension {dim}"),
                format!("dimension {} for {name}", e.dim()),
            ));
        }
    }
    let diff = |a: &JointEmbedding, b: &JointEmbedding| -> Result<Vec<Scalar>> {
        let na = a.normalized()?;
        let nb = b.normalized()?;
        Ok(na.vec.iter().zip(&nb.vec).map(|(x, y)| x - y).collect())
    };
    let d_v = diff(v, v_prime)?;
    let d_s = diff(s, s_prime)?;
    let degenerate = crate::math::norm_l2(&d_v) < DELTA_EPSILON
        || crate::math::norm_l2(&d_s) < DELTA_EPSILON;
    Ok(DeltaPair { d_v, d_s, degenerate })
}

/// Cosine-similarity reward of two vectors; errors on zero norm.
pub fn reward<S: Real>(a: &[S], b: &[S]) -> Result<S> {
    cosine(a, b)
}

/// Mean of (1 − cos(ΔV, ΔS)) over non-degenerate pairs. Returns the
/// loss together with the number of skipped pairs; errors when every
/// pair is degenerate.
pub fn attribute_loss(pairs: &[DeltaPair]) -> Result<(Scalar, usize)> {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for p in pairs {
        if p.degenerate {
            skipped += 1;
            continue;
        }
        sum += 1.0 - reward(&p.d_v, &p.d_s)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateBatch(format!(
            "all {} delta pairs are degenerate",
            pairs.len()
        )));
    }
    Ok((sum / used as Scalar, skipped))
}

/// Mean of (1 − cos(v̄_i, s̄_i)) over the batch.
pub fn semantic_loss(images: &[JointEmbedding], captions: &[JointEmbedding]) -> Result<Scalar> {
    if images.is_empty() || images.len() != captions.len() {
        return Err(Error::invalid(format!(
            "semantic loss needs equal nonempty batches, got {} and {}",
            images.len(),
            captions.len()
        )));
    }
    let mut sum = 0.0;
    for (v, s) in images.iter().zip(captions) {
        sum += 1.0 - reward(&v.vec, &s.vec)?;
    }
    Ok(sum / images.len() as Scalar)
}

/// L = L_a + β·L_s.
pub fn total_loss<S: Real>(l_a: S, l_s: S, beta: S) -> S {
    debug_assert!(beta >= S::zero());
    l_a + beta * l_s
}

/// Attribute and semantic reward of one caption set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardReport {
    pub r_attr: Scalar,
    pub r_sem: Scalar,
    pub combined: Scalar,
}

impl RewardReport {
    pub fn new(r_attr: Scalar, r_sem: Scalar, beta: Scalar) -> Self {
        RewardReport {
            r_attr,
            r_sem,
            combined: r_attr + beta * r_sem,
        }
    }
}

/// Per-pair rewards where a term can be undefined (vanished delta,
/// identical captions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairRewards {
    pub attr: Option<Scalar>,
    pub sem: Option<Scalar>,
}

/// One reward-difference term of the advantage. An undefined baseline
/// falls back to zero (any sample-independent baseline keeps the
/// estimator unbiased); an undefined sampled reward contributes
/// nothing.
pub fn advantage_term(sampled: Option<Scalar>, greedy: Option<Scalar>) -> Scalar {
    match (sampled, greedy) {
        (Some(s), Some(g)) => s - g,
        (Some(s), None) => s,
        (None, _) => 0.0,
    }
}

/// A_i for one pair: attribute term plus β times the semantic term.
pub fn pair_advantage(sampled: &PairRewards, greedy: &PairRewards, beta: Scalar) -> Scalar {
    advantage_term(sampled.attr, greedy.attr) + beta * advantage_term(sampled.sem, greedy.sem)
}

/// Per-pair advantages with the reward reports retained.
#[derive(Debug, Clone, Serialize)]
pub struct AdvantageBatch {
    pub advantages: Vec<Scalar>,
    pub sampled: Vec<PairRewards>,
    pub greedy: Vec<PairRewards>,
    pub beta: Scalar,
}

impl AdvantageBatch {
    pub fn from_pairs(sampled: Vec<PairRewards>, greedy: Vec<PairRewards>, beta: Scalar) -> Result<Self> {
        if sampled.len() != greedy.len() {
            return Err(Error::invalid(format!(
                "advantage batch needs matching lengths, got {} and {}",
                sampled.len(),
                greedy.len()
            )));
        }
        let advantages = sampled
            .iter()
            .zip(&greedy)
            .map(|(s, g)| pair_advantage(s, g, beta))
            .collect();
        Ok(AdvantageBatch {
            advantages,
            sampled,
            greedy,
            beta,
        })
    }

    pub fn mean_advantage(&self) -> Scalar {
        if self.advantages.is_empty() {
            0.0
        } else {
            self.advantages.iter().sum::<Scalar>() / self.advantages.len() as Scalar
        }
    }
}

/// A_i = (r_attr^s − r_attr^g) + β·(r_sem^s − r_sem^g) for fully
/// defined reward reports.
pub fn scst_advantages(
    sampled: &[RewardReport],
    greedy: &[RewardReport],
    beta: Scalar,
) -> Result<AdvantageBatch> {
    AdvantageBatch::from_pairs(
        sampled
            .iter()
            .map(|r| PairRewards {
                attr: Some(r.r_attr),
                sem: Some(r.r_sem),
            })
            .collect(),
        greedy
            .iter()
            .map(|r| PairRewards {
                attr: Some(r.r_attr),
                sem: Some(r.r_sem),
            })
            .collect(),
        beta,
    )
}

/// Loss summary of one batch, derived from the greedy rewards. A term
/// is None when it was degenerate for every pair of the batch.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub l_a: Option<Scalar>,
    pub l_s: Option<Scalar>,
    /// l_a + beta·l_s when both terms are defined.
    pub l: Option<Scalar>,
    pub beta: Scalar,
    pub n: usize,
    pub skipped_attr: usize,
}

impl LossReport {
    pub fn from_greedy_rewards(
        mean_r_attr: Option<Scalar>,
        mean_r_sem: Option<Scalar>,
        beta: Scalar,
        n: usize,
        skipped_attr: usize,
    ) -> Self {
        let l_a = mean_r_attr.map(|r| 1.0 - r);
        let l_s = mean_r_sem.map(|r| 1.0 - r);
        LossReport {
            l_a,
            l_s,
            l: match (l_a, l_s) {
                (Some(a), Some(s)) => Some(total_loss(a, s, beta)),
                _ => None,
            },
            beta,
            n,
            skipped_attr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn e(v: Vec<Scalar>) -> JointEmbedding {
        JointEmbedding::raw(v)
    }

    #[test]
    fn delta_pair_cases() {
        let v = e(vec![1.0, 0.0, 0.0]);
        let s = e(vec![0.0, 1.0, 0.0]);
        // identical image embeddings: zero delta, flagged
        let same = delta_pair(&v, &v, &s, &e(vec![0.0, 0.0, 1.0])).unwrap();
        assert!(same.d_v.iter().all(|&x| x == 0.0));
        assert!(same.degenerate);

        // unit axes: dV = (1, -1, 0)
        let axes = delta_pair(
            &e(vec![1.0, 0.0, 0.0]),
            &e(vec![0.0, 1.0, 0.0]),
            &e(vec![1.0, 0.0, 0.0]),
            &e(vec![0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert_eq!(axes.d_v, vec![1.0, -1.0, 0.0]);
        assert!(!axes.degenerate);

        // scale invariance of the normalization
        let scaled = delta_pair(
            &e(vec![10.0, 0.0, 0.0]),
            &e(vec![0.0, 10.0, 0.0]),
            &e(vec![1.0, 0.0, 0.0]),
            &e(vec![0.0, 0.0, 1.0]),
        )
        .unwrap();
        assert_eq!(scaled.d_v, axes.d_v);

        assert!(delta_pair(&e(vec![0.0, 0.0, 0.0]), &v, &s, &s).is_err());
        assert!(delta_pair(&e(vec![1.0, 0.0]), &v, &s, &s).is_err());
    }

    #[test]
    fn attribute_loss_closed_forms() {
        let aligned = DeltaPair {
            d_v: vec![0.5, 0.0],
            d_s: vec![1.0, 0.0],
            degenerate: false,
        };
        assert!((attribute_loss(&[aligned.clone()]).unwrap().0).abs() < 1e-12);

        let opposed = DeltaPair {
            d_v: vec![1.0, 0.0],
            d_s: vec![-1.0, 0.0],
            degenerate: false,
        };
        assert!((attribute_loss(&[opposed]).unwrap().0 - 2.0).abs() < 1e-12);

        let angled = DeltaPair {
            d_v: vec![1.0, 0.0],
            d_s: vec![1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()],
            degenerate: false,
        };
        let (loss, skipped) = attribute_loss(&[angled.clone()]).unwrap();
        assert!((loss - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(skipped, 0);

        // degenerate pairs are skipped and counted
        let dead = DeltaPair {
            d_v: vec![0.0, 0.0],
            d_s: vec![0.0, 0.0],
            degenerate: true,
        };
        let (loss, skipped) = attribute_loss(&[angled, dead.clone()]).unwrap();
        assert!((loss - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(skipped, 1);

        assert!(matches!(
            attribute_loss(&[dead]),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn semantic_loss_closed_forms() {
        let a = e(vec![1.0, 0.0]);
        let b = e(vec![0.0, 1.0]);
        assert!((semantic_loss(&[a.clone()], &[a.clone()]).unwrap()).abs() < 1e-12);
        assert!((semantic_loss(&[a.clone()], &[b.clone()]).unwrap() - 1.0).abs() < 1e-12);
        // half aligned, half orthogonal
        let mixed = semantic_loss(&[a.clone(), a.clone()], &[a.clone(), b.clone()]).unwrap();
        assert!((mixed - 0.5).abs() < 1e-12);
        assert!(semantic_loss(&[], &[]).is_err());
        assert!(semantic_loss(&[a.clone()], &[a.clone(), b.clone()]).is_err());
        assert!(semantic_loss(&[e(vec![0.0, 0.0])], &[b]).is_err());
    }

    #[test]
    fn total_loss_and_reward_closed_forms() {
        assert_eq!(total_loss(0.4, 0.2, 0.5), 0.5);
        assert_eq!(total_loss(0.4, 0.2, 0.0), 0.4);
        let x: [f64; 3] = [0.3, -0.7, 0.2];
        assert!((reward(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<Scalar> = x.iter().map(|v| -v).collect();
        assert!((reward(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((reward(&[1.0, 0.0], &[1.0, 1.0]).unwrap() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!(reward(&[0.0, 0.0], &x).is_err());
        // f32 instantiation of the same kernel
        assert!((reward(&[1.0f32, 0.0], &[1.0, 1.0]).unwrap() - 1.0 / 2f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn advantages_closed_forms() {
        let s = [RewardReport::new(0.9, 0.7, 0.5)];
        let g = [RewardReport::new(0.5, 0.7, 0.5)];
        let batch = scst_advantages(&s, &g, 0.5).unwrap();
        assert!((batch.advantages[0] - 0.4).abs() < 1e-12);

        let same = scst_advantages(&s, &s, 0.5).unwrap();
        assert_eq!(same.advantages, vec![0.0]);

        // strictly worse on both terms: negative advantage
        let worse = scst_advantages(
            &[RewardReport::new(0.1, 0.0, 0.5)],
            &[RewardReport::new(0.5, 0.6, 0.5)],
            0.5,
        )
        .unwrap();
        assert!(worse.advantages[0] < 0.0);

        assert!(scst_advantages(&s, &[], 0.5).is_err());
    }

    #[test]
    fn undefined_terms_contribute_nothing() {
        assert_eq!(advantage_term(None, Some(0.4)), 0.0);
        assert_eq!(advantage_term(None, None), 0.0);
        assert_eq!(advantage_term(Some(0.3), None), 0.3);
        assert!((advantage_term(Some(0.3), Some(0.1)) - 0.2).abs() < 1e-12);
        let s = PairRewards {
            attr: None,
            sem: Some(0.8),
        };
        let g = PairRewards {
            attr: None,
            sem: Some(0.6),
        };
        assert!((pair_advantage(&s, &g, 0.5) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn loss_report_duality_with_rewards() {
        let report = LossReport::from_greedy_rewards(Some(0.25), Some(0.5), 0.5, 10, 2);
        assert_eq!(report.l_a, Some(0.75));
        assert_eq!(report.l_s, Some(0.5));
        assert_eq!(report.l, Some(1.0));
        let dead = LossReport::from_greedy_rewards(None, Some(0.5), 0.5, 10, 10);
        assert_eq!(dead.l_a, None);
        assert_eq!(dead.l, None);
        assert_eq!(dead.l_s, Some(0.5));
    }

    #[test]
    fn random_inputs_respect_ranges_and_scale_invariance() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..2000 {
            let dim = 2 + rng.next_below(6);
            let draw = |rng: &mut SplitMix64| -> Vec<Scalar> {
                (0..dim).map(|_| rng.next_f64() * 2.0 - 1.0 + 1e-3).collect()
            };
            let (a, b) = (draw(&mut rng), draw(&mut rng));
            let r = reward(&a, &b).unwrap();
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            let alpha = rng.next_f64() * 9.9 + 0.1;
            let scaled: Vec<Scalar> = a.iter().map(|&x| alpha * x).collect();
            assert!((reward(&scaled, &b).unwrap() - r).abs() < 1e-9);

            let vs = vec![JointEmbedding::raw(a.clone())];
            let ss = vec![JointEmbedding::raw(b.clone())];
            let l_s = semantic_loss(&vs, &ss).unwrap();
            assert!((0.0 - 1e-12..=2.0 + 1e-12).contains(&l_s));
            // duality of loss and reward
            assert!((l_s - (1.0 - r)).abs() < 1e-12);
        }
    }
}
