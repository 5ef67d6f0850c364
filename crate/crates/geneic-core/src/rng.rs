//! Deterministic randomness.
//!
//! All stochastic behavior in the crate flows through SplitMix64, a
//! 64-bit-state splittable generator with exact integer arithmetic, so
//! any (seed, tag...) path replays identically across runs and
//! platforms. Training derives an independent stream per (epoch, batch,
//! pair) instead of threading one mutable generator through the run,
//! which is what makes checkpoint resume bit-exact.

/// SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in [0, 1) with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform integer in [0, bound) via rejection-free scaling.
    pub fn next_below(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        let b = bound as u128;
        ((self.next_u64() as u128 * b) >> 64) as usize
    }

    /// Fisher-Yates shuffle in place.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Derives a child seed from a base seed and a tag path.
///
/// Each tag folds into the state through the SplitMix64 output mix, so
/// `derive_seed(s, &[a, b])` and `derive_seed(s, &[b, a])` are distinct
/// streams.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = base;
    for &t in tags {
        s = mix64(s.wrapping_add(GOLDEN_GAMMA).wrapping_add(t.wrapping_mul(GOLDEN_GAMMA)));
    }
    s
}

/// Gaussian source over a SplitMix64 stream (Box-Muller with a cached
/// spare), used for parameter and prompt initialization.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        GaussianSource {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    /// Standard normal draw.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        // u1 must be strictly positive for the log.
        let mut u1 = self.rng.next_f64();
        while u1 <= 0.0 {
            u1 = self.rng.next_f64();
        }
        let u2 = self.rng.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }
}
