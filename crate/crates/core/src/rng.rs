//! Seeded random streams.
//!
//! Every consumer owns its generator. Independent streams are derived from
//! a run seed and a label, so adding a new consumer never shifts the draws
//! of an existing one.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A 64-bit seed derived from `seed` and `label`.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn stream(seed: u64, label: &str) -> SeededRng {
    seeded(sub_seed(seed, label))
}

/// Uniform index in `0..n` from exactly one 64-bit draw (multiply-high; the
/// bias is at most n / 2⁶⁴).
pub fn uniform_index<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    assert!(n > 0, "uniform_index over an empty range");
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

/// Uniform float in `[0, 1)` from one 64-bit draw.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_differ_by_label() {
        assert_ne!(sub_seed(1, "a"), sub_seed(1, "b"));
        assert_ne!(sub_seed(1, "a"), sub_seed(2, "a"));
        assert_eq!(sub_seed(5, "init"), sub_seed(5, "init"));
    }

    #[test]
    fn uniform_index_consumes_one_draw() {
        let mut a = seeded(3);
        let mut b = seeded(3);
        for n in [1, 2, 7, 1000] {
            let _ = uniform_index(&mut a, n);
            let _ = b.next_u64();
        }
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_index_in_range() {
        let mut r = seeded(11);
        for n in 1..50 {
            for _ in 0..20 {
                assert!(uniform_index(&mut r, n) < n);
            }
        }
        let u = unit_f64(&mut r);
        assert!((0.0..1.0).contains(&u));
    }
}
