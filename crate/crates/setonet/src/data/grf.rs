//! Gaussian random field forcing terms for the Darcy benchmark.
//!
//! Zero-mean draws on a uniform grid with squared-exponential covariance
//! k(x, x') = sigma^2 exp(-(x - x')^2 / (2 ell^2)). The covariance is
//! factored once per sampler and reused for every draw.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::sample_rng;
use crate::error::{Result, SetONetError};

/// Grid values of one forcing draw on the sampler's uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfSample {
    pub values: Array1<f64>,
}

/// Squared-exponential sampler with a cached Cholesky factor.
#[derive(Debug)]
pub struct GrfSampler {
    grid: Array1<f64>,
    /// Lower-triangular factor of the jittered covariance.
    chol: Array2<f64>,
    ell: f64,
    sigma2: f64,
    jitter: f64,
}

/// First jitter added to the covariance diagonal; escalates tenfold on
/// factorization failure up to [`MAX_JITTER`].
pub const BASE_JITTER: f64 = 1e-10;
pub const MAX_JITTER: f64 = 1e-6;

impl GrfSampler {
    /// Sampler on the uniform n-point grid over [0, 1].
    pub fn new(n: usize, ell: f64, sigma2: f64) -> Result<Self> {
        if n < 2 {
            return Err(SetONetError::validation("GRF grid needs at least two points"));
        }
        if !(ell > 0.0) || !(sigma2 > 0.0) {
            return Err(SetONetError::validation("GRF kernel parameters must be positive"));
        }
        let grid = Array1::from_iter((0..n).map(|i| i as f64 / (n - 1) as f64));
        let mut cov = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let k = se_kernel(grid[i], grid[j], ell, sigma2);
                cov[[i, j]] = k;
                cov[[j, i]] = k;
            }
        }
        let mut jitter = BASE_JITTER;
        loop {
            let mut jittered = cov.clone();
            for i in 0..n {
                jittered[[i, i]] += jitter;
            }
            if let Some(chol) = cholesky_lower(&jittered) {
                return Ok(GrfSampler { grid, chol, ell, sigma2, jitter });
            }
            jitter *= 10.0;
            if jitter > MAX_JITTER {
                return Err(SetONetError::numerical(format!(
                    "GRF covariance not factorizable with jitter up to {MAX_JITTER:e}"
                )));
            }
        }
    }

    pub fn grid(&self) -> &Array1<f64> {
        &self.grid
    }

    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        se_kernel(x, y, self.ell, self.sigma2)
    }

    /// Jitter that was actually needed; diagnostics only.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// One zero-mean draw: L z with z standard normal.
    pub fn sample(&self, rng: &mut impl Rng) -> GrfSample {
        let n = self.grid.len();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut values = Array1::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.chol[[i, j]] * z[j];
            }
            values[i] = acc;
        }
        GrfSample { values }
    }
}

fn se_kernel(x: f64, y: f64, ell: f64, sigma2: f64) -> f64 {
    let d = x - y;
    sigma2 * (-d * d / (2.0 * ell * ell)).exp()
}

/// Plain lower-triangular Cholesky; None when the matrix is not positive
/// definite to working precision.
fn cholesky_lower(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// One-off draw on the published 501-point Darcy grid. Builds and discards
/// a sampler; batch generation should hold a [`GrfSampler`] instead.
pub fn sample_grf(seed: u64) -> Result<GrfSample> {
    let sampler = GrfSampler::new(501, 0.04, 1.0)?;
    let mut rng = sample_rng(seed, 0);
    Ok(sampler.sample(&mut rng))
}
