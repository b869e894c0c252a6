//! Seeded xorshift64* generator.
//!
//! Every random decision in the pipeline (fold shuffles, weight init, dropout
//! masks, epoch shuffles, synthetic audio) draws from this generator so runs
//! can be reproduced bit-for-bit by any implementation that follows the
//! recipe below:
//!
//! * seeding: `state = splitmix64(seed ^ (stream * 0x9E3779B97F4A7C15))`,
//!   replaced by `0x9E3779B97F4A7C15` if the result is zero;
//! * step: `x ^= x >> 12; x ^= x << 25; x ^= x >> 27;` output
//!   `x * 0x2545F4914F6CDD1D` (wrapping);
//! * `next_f64` takes the top 53 bits: `(out >> 11) * 2^-53`;
//! * `below(n)` is `(out as u128 * n) >> 64`;
//! * `shuffle` is Fisher-Yates from the last index down, `j = below(i + 1)`;
//! * `for_item(seed, stream, i)` seeds with `seed ^ splitmix64(i)` on `stream`,
//!   giving per-item generators that do not depend on processing order.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent streams derived from one user seed.
pub mod stream {
    pub const FOLDS: u64 = 1;
    pub const INIT: u64 = 2;
    pub const EPOCH_SHUFFLE: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const SYNTHETIC: u64 = 5;
    pub const FOLD_TRAIN: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct Xorshift64Star {
    state: u64,
}

impl Xorshift64Star {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let state = splitmix64(seed ^ stream.wrapping_mul(GOLDEN));
        Self {
            state: if state == 0 { GOLDEN } else { state },
        }
    }

    /// Generator for item `item` of a collection, independent of the others.
    pub fn for_item(seed: u64, stream: u64, item: u64) -> Self {
        Self::with_stream(seed ^ splitmix64(item), stream)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal deviate (Box-Muller, cosine branch only).
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Xorshift64Star::new(42);
        let mut b = Xorshift64Star::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_diverge() {
        let mut a = Xorshift64Star::with_stream(42, stream::INIT);
        let mut b = Xorshift64Star::with_stream(42, stream::DROPOUT);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = Xorshift64Star::new(7);
        let mut seen = [false; 5];
        for _ in 0..1000 {
            let k = rng.below(5) as usize;
            seen[k] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Xorshift64Star::new(3);
        let mut v: Vec<u32> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn unit_interval() {
        let mut rng = Xorshift64Star::new(0);
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }
}
