//! Explicit, seedable random state. There is no global generator: every
//! sampling routine takes a `&mut RngState`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha20Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream, e.g. one per worker or per sub-experiment.
    pub fn fork(&mut self) -> RngState {
        RngState::new(self.inner.random::<u64>())
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normals(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }
}

/// I.i.d. `N(mean, std^2)` entries.
pub fn gaussian_sample(rng: &mut RngState, shape: &[usize], mean: f64, std: f64) -> Result<Tensor> {
    if !(std >= 0.0) || !std.is_finite() {
        return Err(Error::Argument(format!("standard deviation must be >= 0, got {std}")));
    }
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| mean + std * rng.normal()).collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_is_constant() {
        let mut rng = RngState::new(1);
        let t = gaussian_sample(&mut rng, &[3, 2], 1.5, 0.0).unwrap();
        assert!(t.as_slice().iter().all(|&x| x == 1.5));
    }

    #[test]
    fn same_seed_same_stream() {
        let a = gaussian_sample(&mut RngState::new(42), &[64], 0.0, 1.0).unwrap();
        let b = gaussian_sample(&mut RngState::new(42), &[64], 0.0, 1.0).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn negative_std_rejected() {
        let mut rng = RngState::new(0);
        assert!(matches!(gaussian_sample(&mut rng, &[1], 0.0, -1.0), Err(Error::Argument(_))));
    }

    #[test]
    fn moments_at_1e5() {
        let mut rng = RngState::new(7);
        let t = gaussian_sample(&mut rng, &[100_000], 0.0, 1.0).unwrap();
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let var = t.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
