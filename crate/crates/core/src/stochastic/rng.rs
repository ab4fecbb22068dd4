use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// A named, independently seeded random stream.
///
/// The seed is derived from `(base_seed, replication_index, stream_name)`, so
/// two runs that share those three values draw the same sequence no matter
/// how other streams are consumed in between. Scenarios compared with common
/// random numbers rely on this.
#[derive(Debug, Clone)]
pub struct RngStream {
    name: String,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(base_seed: u64, replication_index: u32, stream_name: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"emsim/rng-stream/v1");
        hasher.update(base_seed.to_le_bytes());
        hasher.update(replication_index.to_le_bytes());
        hasher.update((stream_name.len() as u64).to_le_bytes());
        hasher.update(stream_name.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        RngStream {
            name: stream_name.to_string(),
            seed,
            rng: ChaCha8Rng::from_seed(digest),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// First eight bytes of the derived 256-bit seed.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            // Still consume a draw so the stream position does not depend on p.
            let _ = self.uniform();
            return false;
        }
        self.uniform() < p
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.rng.random_range(0..n)
    }

    /// Categorical draw over nonnegative weights by inverse transform.
    /// Returns `None` when all weights are zero.
    pub fn categorical(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        let u = self.uniform();
        if !(total > 0.0) {
            return None;
        }
        let target = u * total;
        let mut acc = 0.0;
        let mut last_positive = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = Some(i);
                acc += w;
                if target < acc {
                    return Some(i);
                }
            }
        }
        last_positive
    }

    pub fn rng_mut(&mut self) -> &mut impl RngCore {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_keys_identical_sequences() {
        let mut a = RngStream::new(42, 3, "arrivals/rieti");
        let mut b = RngStream::new(42, 3, "arrivals/rieti");
        for _ in 0..10_000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn distinct_keys_differ() {
        let a = RngStream::new(42, 0, "a");
        let b = RngStream::new(42, 0, "b");
        let c = RngStream::new(42, 1, "a");
        let d = RngStream::new(43, 0, "a");
        assert_ne!(a.seed(), b.seed());
        assert_ne!(a.seed(), c.seed());
        assert_ne!(a.seed(), d.seed());
    }

    #[test]
    fn interleaving_does_not_perturb_streams() {
        let mut a1 = RngStream::new(7, 0, "a");
        let mut b1 = RngStream::new(7, 0, "b");
        let mut seq_a1 = Vec::new();
        let mut seq_b1 = Vec::new();
        for _ in 0..1000 {
            seq_a1.push(a1.uniform());
            seq_b1.push(b1.uniform());
        }
        let mut a2 = RngStream::new(7, 0, "a");
        let mut b2 = RngStream::new(7, 0, "b");
        let seq_b2: Vec<f64> = (0..1000).map(|_| b2.uniform()).collect();
        let seq_a2: Vec<f64> = (0..1000).map(|_| a2.uniform()).collect();
        assert_eq!(seq_a1, seq_a2);
        assert_eq!(seq_b1, seq_b2);
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut s = RngStream::new(1, 0, "cat");
        for _ in 0..1000 {
            let i = s.categorical(&[0.0, 2.0, 0.0, 1.0]).unwrap();
            assert!(i == 1 || i == 3);
        }
        assert_eq!(s.categorical(&[0.0, 0.0]), None);
    }
}
