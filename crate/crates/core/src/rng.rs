//! Seeded random streams and the photon / read-noise samplers.
//!
//! Every stochastic routine takes an explicit seed. Parallel work is split into
//! independent ChaCha streams keyed by `(seed, stream index)`, so results do not
//! depend on how the work is scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

pub type SimRng = ChaCha8Rng;

/// Means at or above this use a rounded normal approximation.
pub const POISSON_EXACT_LIMIT: f64 = 1000.0;

/// Stream `index` of the generator family rooted at `seed`.
pub fn substream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derive an unrelated seed for a named stage of a pipeline (pilot shot,
/// gain-stack frame, ...), so stages do not share noise realisations.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then a splitmix64 finaliser.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    if mean < POISSON_EXACT_LIMIT {
        // `mean` is positive and finite here, so construction cannot fail.
        Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(0.0)
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (mean + mean.sqrt() * z).round().max(0.0)
    }
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let draw = |seed, idx| {
            let mut r = substream(seed, idx);
            (0..4).map(|_| r.random::<u32>()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7, 3), draw(7, 3));
        assert_ne!(draw(7, 3), draw(7, 4));
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "pilot", 0), derive_seed(1, "frame", 0));
        assert_ne!(derive_seed(1, "frame", 0), derive_seed(1, "frame", 1));
        assert_eq!(derive_seed(9, "x", 2), derive_seed(9, "x", 2));
    }

    #[test]
    fn poisson_moments_match_across_the_switchover() {
        for &mean in &[0.3, 12.0, 999.0, 1500.0] {
            let mut rng = substream(11, 0);
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| poisson(&mut rng, mean)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (mean / n as f64).sqrt();
            assert!((m - mean).abs() < 4.0 * se_mean, "mean {m} vs {mean}");
            assert!((v / mean - 1.0).abs() < 0.02, "var {v} vs {mean}");
        }
    }

    #[test]
    fn zero_mean_is_exactly_zero() {
        let mut rng = substream(0, 0);
        assert_eq!(poisson(&mut rng, 0.0), 0.0);
    }
}
