//! Seedable, forkable random stream.
//!
//! The generator is ChaCha8 keyed by a 32-byte key. A seed expands into a
//! key with the PCG32 expansion of `SeedableRng::seed_from_u64`; a labeled
//! child key is the first 32 bytes of the ChaCha8 keystream under the
//! parent key on the stream selected by the FNV-1a hash of the label.
//! Forking depends only on the parent key, never on how many draws the
//! parent has made. Reference vectors live in `tests/rng_vectors.rs`.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    key: [u8; 32],
    inner: ChaCha8Rng,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut key);
        Self::from_key(key)
    }

    fn from_key(key: [u8; 32]) -> Self {
        Rng { key, inner: ChaCha8Rng::from_seed(key) }
    }

    /// Child stream for `label`. Equal (parent, label) pairs always give
    /// equal children.
    pub fn fork(&self, label: &str) -> Rng {
        let mut g = ChaCha8Rng::from_seed(self.key);
        g.set_stream(fnv1a64(label.as_bytes()));
        let mut key = [0u8; 32];
        g.fill_bytes(&mut key);
        Self::from_key(key)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidParameter(format!("uniform bounds [{lo}, {hi}]")));
        }
        if lo == hi {
            return Ok(lo);
        }
        Ok(lo + (hi - lo) * self.unit())
    }

    pub fn normal(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !mu.is_finite() || !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParameter(format!("normal(mu={mu}, sigma={sigma})")));
        }
        let dist = Normal::new(mu, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(dist.sample(&mut self.inner))
    }

    pub fn poisson(&mut self, lambda: f64) -> Result<u64> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidParameter(format!("poisson(lambda={lambda})")));
        }
        if lambda == 0.0 {
            return Ok(0);
        }
        let dist: Poisson<f64> = Poisson::new(lambda).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(dist.sample(&mut self.inner) as u64)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_uniform() {
        let mut r = Rng::new(1);
        assert_eq!(r.uniform(3.0, 3.0).unwrap(), 3.0);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut r = Rng::new(1);
        assert!(r.uniform(2.0, 1.0).is_err());
        assert!(r.normal(0.0, -1.0).is_err());
        assert!(r.poisson(-0.5).is_err());
        assert!(r.poisson(f64::NAN).is_err());
        assert_eq!(r.poisson(0.0).unwrap(), 0);
    }

    #[test]
    fn poisson_mean() {
        let mut r = Rng::new(11);
        let n = 100_000;
        let mean = (0..n).map(|_| r.poisson(4.0).unwrap() as f64).sum::<f64>() / n as f64;
        assert!((mean - 4.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn normal_mean() {
        let mut r = Rng::new(12);
        let n = 100_000;
        let mean = (0..n).map(|_| r.normal(0.0, 1.0).unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn forks_are_reproducible_and_distinct() {
        let root = Rng::new(99);
        let mut a1 = root.fork("a");
        let mut a2 = root.fork("a");
        let mut b = root.fork("b");
        let xs: Vec<u64> = (0..1000).map(|_| a1.next_u64()).collect();
        let ys: Vec<u64> = (0..1000).map(|_| a2.next_u64()).collect();
        let zs: Vec<u64> = (0..1000).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().zip(&zs).all(|(x, z)| x != z));
    }

    #[test]
    fn fork_ignores_parent_position() {
        let mut root = Rng::new(5);
        let before = root.fork("x").next_u64();
        root.next_u64();
        assert_eq!(root.fork("x").next_u64(), before);
    }
}
