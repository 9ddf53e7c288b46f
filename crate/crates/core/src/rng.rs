//! Seed derivation and counter-based Gaussian draws.
//!
//! Every stream in the crate is keyed by a tuple of integers (master seed,
//! replica, role, index, ...). Sequential streams (path increments, Gram
//! draws) are ChaCha8 generators seeded from the derived key; random-access
//! streams (lattice noise) hash the key directly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

pub type StreamRng = ChaCha8Rng;

/// Stream roles, mixed into derived seeds so that streams never collide.
pub mod role {
    pub const PATH: u64 = 0x5041_5448;
    pub const GRAM: u64 = 0x4752_414d;
    pub const FIELD: u64 = 0x4649_454c;
    pub const FUNCTIONAL: u64 = 0x4655_4e43;
    pub const LIMIT: u64 = 0x4c49_4d54;
    pub const BOOTSTRAP: u64 = 0x424f_4f54;
    pub const CHECK: u64 = 0x4348_454b;
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an ordered key into 64 bits (SplitMix64 finalizer chained per word).
#[inline]
pub fn hash_key(key: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &k in key {
        h = mix64(h.wrapping_add(k).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (h >> 29));
    }
    mix64(h)
}

/// Seed for a sequential stream identified by `key`.
pub fn derive(key: &[u64]) -> u64 {
    hash_key(key)
}

pub fn stream(key: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive(key))
}

/// Uniform in the open interval (0, 1) from 52 hashed bits.
#[inline]
pub fn open_uniform(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

fn standard_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(Normal::standard)
}

/// Standard normal quantile.
#[inline]
pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

/// Counter-based standard normal: inverse CDF of the hashed key.
#[inline]
pub fn counter_normal(seed: u64, a: u64, b: u64) -> f64 {
    normal_quantile(open_uniform(hash_key(&[seed, a, b])))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_separates_keys() {
        assert_ne!(derive(&[1, 2]), derive(&[2, 1]));
        assert_ne!(derive(&[1, 2]), derive(&[1, 2, 0]));
        assert_eq!(derive(&[7, 8, 9]), derive(&[7, 8, 9]));
    }

    #[test]
    fn open_uniform_bounds() {
        assert!(open_uniform(0) > 0.0);
        assert!(open_uniform(u64::MAX) < 1.0);
    }

    #[test]
    fn counter_normal_moments() {
        let n = 200_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let z = counter_normal(11, 3, i);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 5.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 5.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn quantile_matches_cdf() {
        for &p in &[1e-6, 0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-9 * p.min(1.0 - p));
        }
    }
}
