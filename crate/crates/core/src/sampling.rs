//! The sampling distribution of the candidate perturbations and seeded,
//! counter-based random streams.

use std::fmt::Debug;

use nalgebra::DVector;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Distribution `nu_U` of the perturbation vectors.
pub trait SampleDistribution: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64>;
    fn density(&self, u: &DVector<f64>) -> f64 {
        self.log_density(u).exp()
    }
    fn log_density(&self, u: &DVector<f64>) -> f64;
    /// `E ||U||`.
    fn mean_norm(&self) -> f64;
    /// `E ||U||^2`.
    fn mean_sq_norm(&self) -> f64;
}

/// Standard multivariate normal `N(0, I_d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    dim: usize,
    mean_norm: f64,
}

impl Gaussian {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self {
            dim,
            mean_norm: gaussian_mean_norm(dim),
        }
    }
}

impl SampleDistribution for Gaussian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng))
    }

    fn log_density(&self, u: &DVector<f64>) -> f64 {
        -0.5 * u.norm_squared() - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    fn mean_norm(&self) -> f64 {
        self.mean_norm
    }

    fn mean_sq_norm(&self) -> f64 {
        self.dim as f64
    }
}

/// `E ||N(0, I_d)|| = sqrt(2) Gamma((d+1)/2) / Gamma(d/2)`, via log-gamma.
pub fn gaussian_mean_norm(d: usize) -> f64 {
    let d = d as f64;
    std::f64::consts::SQRT_2 * (libm::lgamma(0.5 * (d + 1.0)) - libm::lgamma(0.5 * d)).exp()
}

/// Draws `lambda` independent vectors.
pub fn sample_batch(dist: &dyn SampleDistribution, rng: &mut dyn RngCore, lambda: usize) -> Vec<DVector<f64>> {
    (0..lambda).map(|_| dist.sample(rng)).collect()
}

/// What a stream is used for; keeps e.g. candidate draws and Monte Carlo
/// estimates of the same chain apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Candidates = 0,
    Exceedance = 1,
    Init = 2,
    Jitter = 3,
    Probe = 4,
}

/// Key of a reproducible random stream: `(seed, chain, purpose)`, positioned
/// by time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub chain: u64,
    pub purpose: Purpose,
}

/// Words reserved per time step inside one stream.
const WORDS_PER_STEP: u128 = 1 << 40;

impl StreamKey {
    pub fn new(seed: u64, chain: u64, purpose: Purpose) -> Self {
        Self { seed, chain, purpose }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    pub fn with_chain(self, chain: u64) -> Self {
        Self { chain, ..self }
    }

    /// Generator positioned at the start of time step `step`.
    pub fn rng_at(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.chain << 8) | self.purpose as u64);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        rng
    }

    /// Candidate batch for time step `step`.
    pub fn batch_at(&self, dist: &dyn SampleDistribution, step: u64, lambda: usize) -> Vec<DVector<f64>> {
        sample_batch(dist, &mut self.rng_at(step), lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_norm_small_dims() {
        assert!((gaussian_mean_norm(1) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!((gaussian_mean_norm(2) - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn mean_norm_matches_quadrature_in_one_dim() {
        // int |u| phi(u) du by the midpoint rule on [-12, 12]
        let n = 200_000;
        let h = 24.0 / n as f64;
        let sum: f64 = (0..n)
            .map(|i| {
                let u = -12.0 + (i as f64 + 0.5) * h;
                u.abs() * (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .sum();
        assert!((sum * h - gaussian_mean_norm(1)).abs() < 1e-9);
    }

    #[test]
    fn mean_norm_brackets_sqrt_d() {
        for d in 1..=100 {
            let e = gaussian_mean_norm(d);
            let s = (d as f64).sqrt();
            assert!(e < s && s < e * (1.0 + 1.0 / (2.0 * d as f64)), "d={d}");
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let g = Gaussian::new(2);
        let key = StreamKey::new(42, 0, Purpose::Candidates);
        let a = key.batch_at(&g, 5, 3);
        let b = key.batch_at(&g, 5, 3);
        assert_eq!(a, b);
        assert_ne!(a, key.batch_at(&g, 6, 3));
        assert_ne!(a, key.with_chain(1).batch_at(&g, 5, 3));
        assert_ne!(a, key.with_purpose(Purpose::Exceedance).batch_at(&g, 5, 3));
    }

    #[test]
    fn density_is_positive_and_normalized_in_one_dim() {
        let g = Gaussian::new(1);
        let n = 16_000;
        let h = 16.0 / n as f64;
        let total: f64 = (0..n)
            .map(|i| g.density(&DVector::from_element(1, -8.0 + (i as f64 + 0.5) * h)))
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 0.01);
        assert!(g.density(&DVector::from_element(1, 30.0)) > 0.0);
    }
}
