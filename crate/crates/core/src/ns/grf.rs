//! Gaussian random field initial conditions on the periodic unit square.
//!
//! The covariance operator is `C = sigma^2 (-Laplacian + tau^2)^(-alpha)`. Each
//! Fourier mode gets an independent complex Gaussian coefficient whose
//! standard deviation is the square root of the operator eigenvalue,
//! `sigma * (4 pi^2 |k|^2 + tau^2)^(-alpha / 2)`. Taking the real part of the
//! synthesized field enforces Hermitian symmetry, so samples are exactly real.

use ndarray::Array3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spectral::Fft2;
use crate::error::{Error, Result};
use crate::grid::fft::wavenumber;
use crate::grid::Field;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfConfig {
    pub tau: f64,
    pub alpha: f64,
    /// Amplitude `sigma`; the covariance carries `sigma^2`.
    pub sigma: f64,
}

impl Default for GrfConfig {
    /// `tau = 7`, `alpha = 2.5` and `sigma^2 = r^(3/2)` with `r = tau`.
    fn default() -> Self {
        Self { tau: 7.0, alpha: 2.5, sigma: 7f64.powf(0.75) }
    }
}

impl GrfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.alpha.is_finite() && self.sigma.is_finite()) || self.sigma < 0.0 {
            return Err(Error::invalid(format!("bad GRF config {self:?}")));
        }
        Ok(())
    }

    /// Standard deviation of the coefficient at integer wavenumber `k`.
    pub fn mode_std(&self, kx: i64, ky: i64) -> f64 {
        if kx == 0 && ky == 0 {
            return 0.0;
        }
        let k2 = (kx * kx + ky * ky) as f64;
        let lambda = 4.0 * std::f64::consts::PI.powi(2) * k2 + self.tau * self.tau;
        self.sigma * lambda.powf(-self.alpha / 2.0)
    }
}

/// Samples a single-channel mean-zero field on an `n x n` grid.
pub fn sample_grf(cfg: &GrfConfig, n: usize, seed: u64) -> Result<Field> {
    cfg.validate()?;
    if n < 16 {
        return Err(Error::invalid(format!("GRF resolution {n} is below 16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        let ky = wavenumber(i, n);
        for j in 0..n {
            let kx = wavenumber(j, n);
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            // Scaled by n^2 so the inverse transform's 1/n^2 yields a
            // resolution-independent amplitude.
            let s = cfg.mode_std(kx, ky) * (n * n) as f64;
            coeffs[i * n + j] = Complex64::new(a, b) * s;
        }
    }
    Fft2::new(n).inverse(&mut coeffs);
    let data = Array3::from_shape_fn((1, n, n), |(_, i, j)| coeffs[i * n + j].re);
    Field::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fft2;

    #[test]
    fn seeded_sample_is_reproducible() {
        let cfg = GrfConfig::default();
        let a = sample_grf(&cfg, 32, 11).unwrap();
        let b = sample_grf(&cfg, 32, 11).unwrap();
        let c = sample_grf(&cfg, 32, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_mean_is_zero() {
        let f = sample_grf(&GrfConfig::default(), 64, 3).unwrap();
        assert!(f.mean().abs() < 1e-12, "{}", f.mean());
        assert!(f.max_abs() > 1e-3);
    }

    #[test]
    fn small_grid_rejected() {
        assert!(sample_grf(&GrfConfig::default(), 8, 0).is_err());
    }

    #[test]
    fn coefficient_variance_follows_covariance_decay() {
        // Var(w_k) is proportional to (4 pi^2 |k|^2 + 49)^(-2.5), so the ratio of
        // the |k|^2 = 1 and |k|^2 = 64 bins is ((4 pi^2 + 49) / (256 pi^2 + 49))^(-2.5).
        let cfg = GrfConfig::default();
        let n = 32;
        let samples = 10_000;
        let (mut v1, mut v64) = (0.0, 0.0);
        for s in 0..samples {
            let spec = fft2(&sample_grf(&cfg, n, s).unwrap()).unwrap();
            v1 += spec.coeffs()[[0, 0, 1]].norm_sqr();
            v64 += spec.coeffs()[[0, 0, 8]].norm_sqr();
        }
        let pi2 = std::f64::consts::PI.powi(2);
        let expected = ((4.0 * pi2 + 49.0) / (256.0 * pi2 + 49.0)).powf(-2.5);
        let ratio = v1 / v64;
        assert!((ratio / expected - 1.0).abs() < 0.05, "ratio {ratio} vs {expected}");
    }
}
