//! Seeded, portable random streams.
//!
//! Every stream is a ChaCha8 generator (RFC 7539 block function, 8 rounds) keyed by
//! `seed XOR tag_hash`, where `tag_hash` is the 64-bit FNV-1a hash of the purpose tag
//! (optionally followed by a little-endian `u64` index). ChaCha output is defined
//! bit-for-bit independent of platform, so a `(seed, tag)` pair names one stream
//! everywhere. Consumers that draw for different purposes use different tags, so adding
//! draws in one place never shifts another consumer's sequence.

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Hash of a purpose tag, mixed into the seed to select a substream.
pub fn tag_hash(tag: &str) -> u64 {
    fnv1a(FNV_OFFSET, tag.as_bytes())
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    /// Stream for `seed` mixed with `tag`.
    pub fn substream(seed: u64, tag: &str) -> Self {
        let key = seed ^ tag_hash(tag);
        Rng {
            seed: key,
            inner: ChaCha8Rng::seed_from_u64(key),
        }
    }

    /// Stream for `seed`, `tag` and an index, e.g. one stream per bootstrap iteration.
    pub fn indexed(seed: u64, tag: &str, index: u64) -> Self {
        let key = seed ^ fnv1a(tag_hash(tag), &index.to_le_bytes());
        Rng {
            seed: key,
            inner: ChaCha8Rng::seed_from_u64(key),
        }
    }

    /// The effective key this stream was created from.
    pub fn key(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw via the Box-Muller transform (one draw per call).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// True with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::substream(42, "init");
        let mut b = Rng::substream(42, "init");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn tags_select_distinct_streams() {
        let mut a = Rng::substream(42, "init");
        let mut b = Rng::substream(42, "dropout");
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
        let mut c = Rng::indexed(42, "boot", 0);
        let mut d = Rng::indexed(42, "boot", 1);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(tag_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(tag_hash("a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(tag_hash("foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn uniform_and_normal_moments() {
        let mut rng = Rng::substream(7, "moments");
        let n = 200_000;
        let (mut su, mut sn, mut sn2) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            su += u;
            let z = rng.normal();
            sn += z;
            sn2 += z * z;
        }
        let nf = n as f64;
        assert!((su / nf - 0.5).abs() < 0.005);
        assert!((sn / nf).abs() < 0.01);
        assert!((sn2 / nf - 1.0).abs() < 0.02);
    }
}
