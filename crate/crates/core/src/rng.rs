//! Deterministic random streams.
//!
//! Each stream is ChaCha20 keyed by `seed_from_u64(seed)` with the stream id
//! selecting an independent 2^64-block substream, so session `k` of a
//! simulation draws the same numbers whichever worker produces it. Uniform
//! and bounded draws are implemented here rather than through `rand`'s
//! distributions so their bit patterns cannot change with a dependency
//! upgrade.

use std::collections::HashMap;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct Stream(ChaCha20Rng);

impl Stream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Stream(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// `true` with probability `p`; exact at 0 and 1.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in `0..n` (Lemire's multiply-and-reject).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// `k` distinct values from `0..n` in draw order (partial Fisher–Yates
    /// over a sparse swap table, O(k) memory).
    pub fn distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from {n}");
        let mut swapped: HashMap<usize, usize> = HashMap::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        for t in 0..k {
            let r = t + self.below((n - t) as u64) as usize;
            let at_r = *swapped.get(&r).unwrap_or(&r);
            let at_t = *swapped.get(&t).unwrap_or(&t);
            swapped.insert(r, at_t);
            out.push(at_r);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map({
            let mut s = Stream::new(7, 0);
            move |_| s.next_u64()
        }).collect();
        let mut s = Stream::new(7, 0);
        let b: Vec<u64> = (0..4).map(|_| s.next_u64()).collect();
        assert_eq!(a, b);
        let mut other = Stream::new(7, 1);
        assert_ne!(a[0], other.next_u64());
    }

    #[test]
    fn bernoulli_extremes_are_exact() {
        let mut s = Stream::new(1, 1);
        for _ in 0..1000 {
            assert!(s.bernoulli(1.0));
            assert!(!s.bernoulli(0.0));
        }
    }

    #[test]
    fn distinct_is_a_permutation_when_full() {
        let mut s = Stream::new(3, 9);
        let mut v = s.distinct(20, 20);
        v.sort();
        assert_eq!(v, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn below_is_roughly_uniform() {
        let mut s = Stream::new(11, 0);
        let mut counts = [0u32; 3];
        for _ in 0..30_000 {
            counts[s.below(3) as usize] += 1;
        }
        // 4σ of Binomial(30000, 1/3) is about 326
        for c in counts {
            assert!((c as i64 - 10_000).abs() < 330, "{counts:?}");
        }
    }
}
