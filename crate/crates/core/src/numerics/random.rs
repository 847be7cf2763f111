use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Seeded, reproducible random source. Same seed and call sequence give
/// bit-identical draws on every platform.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent source keyed by `(seed, key)`; does not advance `self`.
    pub fn derive(&self, key: u64) -> Self {
        Self::new(mix(self.seed ^ mix(key.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Draws from the categorical distribution `probs` (must sum to ~1).
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left `acc` a hair under 1: fall back to the last class with mass.
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }

    /// Logarithm of a Gamma(shape, 1) draw. Working in log space keeps tiny
    /// shapes (1e-4 and below) from underflowing to exact zeros.
    pub fn ln_gamma_sample(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            // Boost: G(a) = G(a + 1) * U^(1/a).
            let boosted = self.ln_gamma_sample(shape + 1.0);
            let u = 1.0 - self.uniform(); // (0, 1]
            return boosted + u.ln() / shape;
        }
        // Marsaglia–Tsang.
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = 1.0 - self.uniform();
            if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
                return (d * v).ln();
            }
        }
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Symmetric Dirichlet(gamma, ..., gamma) draw of length `classes`.
pub fn dirichlet_sample(gamma: f64, classes: usize, rng: &mut RandomSource) -> Result<Vec<f64>> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("dirichlet concentration must be > 0, got {gamma}")));
    }
    if classes < 2 {
        return Err(Error::InvalidParameter(format!("dirichlet needs >= 2 classes, got {classes}")));
    }
    let logs: Vec<f64> = (0..classes).map(|_| rng.ln_gamma_sample(gamma)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for x in &mut out {
        *x /= total;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let mut a = RandomSource::new(7);
        let mut b = RandomSource::new(7);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(a.index(13), b.index(13));
        }
    }

    #[test]
    fn derive_is_independent_of_parent_position() {
        let mut a = RandomSource::new(3);
        let before = a.derive(11).uniform();
        a.uniform();
        assert_eq!(before, a.derive(11).uniform());
        assert_ne!(a.derive(11).uniform(), a.derive(12).uniform());
    }

    #[test]
    fn dirichlet_rejects_bad_gamma() {
        let mut rng = RandomSource::new(0);
        assert!(matches!(dirichlet_sample(0.0, 3, &mut rng), Err(Error::InvalidParameter(_))));
        assert!(matches!(dirichlet_sample(-1.0, 3, &mut rng), Err(Error::InvalidParameter(_))));
        assert!(dirichlet_sample(1.0, 1, &mut rng).is_err());
    }

    #[test]
    fn dirichlet_large_gamma_mean_is_uniform() {
        let mut rng = RandomSource::new(1);
        let classes = 5;
        let mut mean = vec![0.0; classes];
        let draws = 10_000;
        for _ in 0..draws {
            for (m, x) in mean.iter_mut().zip(dirichlet_sample(1e6, classes, &mut rng).unwrap()) {
                *m += x / draws as f64;
            }
        }
        for m in mean {
            assert!((m - 0.2).abs() < 0.02, "{m}");
        }
    }

    #[test]
    fn dirichlet_tiny_gamma_is_one_hot() {
        let mut rng = RandomSource::new(2);
        let hits = (0..1000)
            .filter(|_| {
                let q = dirichlet_sample(1e-4, 10, &mut rng).unwrap();
                q.iter().copied().fold(0.0, f64::max) > 0.99
            })
            .count();
        assert!(hits >= 950, "{hits}");
    }

    #[test]
    fn dirichlet_draws_lie_on_simplex() {
        let mut rng = RandomSource::new(4);
        for &g in &[1e-4, 1e-2, 1.0, 100.0] {
            for _ in 0..200 {
                let q = dirichlet_sample(g, 7, &mut rng).unwrap();
                assert!(q.iter().all(|&x| x >= 0.0 && x.is_finite()));
                assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_mean_matches_shape() {
        let mut rng = RandomSource::new(5);
        for &shape in &[0.5, 1.0, 3.0] {
            let n = 20_000;
            let mean: f64 = (0..n).map(|_| rng.ln_gamma_sample(shape).exp()).sum::<f64>() / n as f64;
            // Gamma(k,1) has variance k; 5 standard errors.
            assert!((mean - shape).abs() < 5.0 * (shape / n as f64).sqrt(), "{shape}: {mean}");
        }
    }

    #[test]
    fn categorical_respects_zero_mass() {
        let mut rng = RandomSource::new(9);
        for _ in 0..1000 {
            assert_eq!(rng.categorical(&[0.0, 1.0, 0.0]), 1);
        }
    }
}
