use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Reproducible random stream keyed by `(seed, stream_id)`.
///
/// Backed by a ChaCha8 generator whose nonce is the stream id, so distinct
/// ids give independent streams and no stream depends on draws made from
/// another one.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic 64-bit mix of two values; used to derive child seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.rotate_left(17) ^ 0xD6E8_FEB8_6659_FD93)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream that depends only on `(seed, stream_id, sub)`, never on
    /// how many values have been drawn from `self`.
    pub fn derive(&self, sub: u64) -> RngStream {
        RngStream::new(self.seed, mix_seed(self.stream_id, sub))
    }

    /// Uniform draw on `[a, b)`; returns `a` when `a == b`.
    pub fn uniform(&mut self, a: f64, b: f64) -> f64 {
        let u: f64 = self.rng.random();
        a + (b - a) * u
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        mean + std * z
    }

    /// Uniform integer on the closed range `[lo, hi]`.
    pub fn int_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        self.rng.random_range(lo..=hi)
    }

    /// `k` distinct indices drawn uniformly from `0..n`, in draw order.
    pub fn choose_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        index::sample(&mut self.rng, n, k.min(n)).into_vec()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_draws() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.uniform(0.0, 1.0).to_bits(), b.uniform(0.0, 1.0).to_bits());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
    }

    #[test]
    fn uniform_mean_is_half() {
        let mut r = RngStream::new(1, 2);
        let n = 100_000;
        let mean = (0..n).map(|_| r.uniform(0.0, 1.0)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn full_choice_is_permutation() {
        let mut r = RngStream::new(9, 9);
        let mut idx = r.choose_without_replacement(50, 50);
        idx.sort_unstable();
        assert_eq!(idx, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn derive_ignores_parent_position() {
        let a = RngStream::new(5, 3);
        let mut b = RngStream::new(5, 3);
        b.uniform(0.0, 1.0);
        let mut ca = a.derive(11);
        let mut cb = b.derive(11);
        assert_eq!(ca.next_u64(), cb.next_u64());
    }
}
