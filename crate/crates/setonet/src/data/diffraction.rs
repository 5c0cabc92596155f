//! Phase-screen diffraction on the periodic unit square.
//!
//! A set of Gaussian phase bumps (minimal-image distance on the torus)
//! modulates a Gaussian envelope into the initial field A exp(i Phi), which
//! is propagated under the free Schrodinger equation by multiplying Fourier
//! coefficients with exp(-i |xi|^2 t0 / 2) on a uniform grid.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;

use super::{BenchmarkCard, GenParams, OperatorSample};
use crate::config::BenchmarkId;
use crate::error::{Result, SetONetError};

/// Minimal-image displacement on the unit torus, in [-0.5, 0.5].
pub fn wrap_torus(delta: f64) -> f64 {
    delta - delta.round()
}

/// Gaussian phase field of one bump set at (x, y).
fn phase_at(x: f64, y: f64, bumps: &Array2<f64>, alphas: &[f64], widths: &[f64]) -> f64 {
    let mut phi = 0.0;
    for (i, b) in bumps.rows().into_iter().enumerate() {
        let dx = wrap_torus(x - b[0]);
        let dy = wrap_torus(y - b[1]);
        let w2 = widths[i] * widths[i];
        phi += alphas[i] * (-(dx * dx + dy * dy) / (2.0 * w2)).exp();
    }
    phi
}

/// Initial field on the n x n lattice x_a = a/n: Gaussian envelope (width
/// `env_width`, centered at (1/2, 1/2), zero carrier) times exp(i Phi).
pub fn initial_field(
    n: usize,
    bumps: &Array2<f64>,
    alphas: &[f64],
    widths: &[f64],
    env_width: f64,
) -> Array2<Complex64> {
    let mut field = Array2::from_elem((n, n), Complex64::ZERO);
    let inv_2s2 = 1.0 / (2.0 * env_width * env_width);
    for a in 0..n {
        let x = a as f64 / n as f64;
        for b in 0..n {
            let y = b as f64 / n as f64;
            let dx = x - 0.5;
            let dy = y - 0.5;
            let env = (-(dx * dx + dy * dy) * inv_2s2).exp();
            let phi = phase_at(x, y, bumps, alphas, widths);
            field[[a, b]] = Complex64::from_polar(env, phi);
        }
    }
    field
}

/// Free-Schrodinger spectral step on a square periodic grid: each Fourier
/// coefficient picks up exp(-i |xi|^2 t0 / 2) with xi = 2 pi k at signed
/// integer frequency k. t0 = 0 short-circuits to an exact identity.
pub fn propagate_free_schrodinger(
    field: &Array2<Complex64>,
    t0: f64,
) -> Result<Array2<Complex64>> {
    let n = field.nrows();
    if field.ncols() != n || n == 0 {
        return Err(SetONetError::validation("propagation needs a square nonempty grid"));
    }
    if !t0.is_finite() {
        return Err(SetONetError::validation("propagation time must be finite"));
    }
    if t0 == 0.0 {
        return Ok(field.clone());
    }
    let mut buf: Vec<Complex64> = field.iter().copied().collect();
    fft2_in_place(&mut buf, n, FftDirection::Forward);

    let two_pi = 2.0 * std::f64::consts::PI;
    for ka in 0..n {
        let fa = signed_freq(ka, n) * two_pi;
        for kb in 0..n {
            let fb = signed_freq(kb, n) * two_pi;
            let xi2 = fa * fa + fb * fb;
            let mult = Complex64::from_polar(1.0, -0.5 * xi2 * t0);
            buf[ka * n + kb] *= mult;
        }
    }

    fft2_in_place(&mut buf, n, FftDirection::Inverse);
    let scale = 1.0 / (n * n) as f64;
    let out: Vec<Complex64> = buf.into_iter().map(|z| z * scale).collect();
    Ok(Array2::from_shape_vec((n, n), out).expect("shape preserved"))
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

enum FftDirection {
    Forward,
    Inverse,
}

/// Row-column 2D FFT over a row-major n x n buffer; unnormalized.
fn fft2_in_place(buf: &mut [Complex64], n: usize, dir: FftDirection) {
    let mut planner = FftPlanner::<f64>::new();
    let fft = match dir {
        FftDirection::Forward => planner.plan_fft_forward(n),
        FftDirection::Inverse => planner.plan_fft_inverse(n),
    };
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::ZERO; n];
    for j in 0..n {
        for i in 0..n {
            col[i] = buf[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            buf[i * n + j] = col[i];
        }
    }
}

/// Mean squared magnitude; the spectral step must conserve it.
pub fn grid_l2(field: &Array2<Complex64>) -> f64 {
    field.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Shared query lattice for an n x n grid: rows (a/n, b/n), a outer.
pub fn diffraction_queries(n: usize) -> Array2<f64> {
    let mut q = Array2::zeros((n * n, 2));
    for a in 0..n {
        for b in 0..n {
            q[[a * n + b, 0]] = a as f64 / n as f64;
            q[[a * n + b, 1]] = b as f64 / n as f64;
        }
    }
    q
}

/// One sample: draws the bump set, propagates, and stores the complex field
/// as separate real/imaginary target channels at every grid point.
pub fn diffraction_sample(card: &BenchmarkCard, rng: &mut impl Rng) -> Result<OperatorSample> {
    if card.bench != BenchmarkId::Diffraction {
        return Err(SetONetError::validation("diffraction sampler needs a diffraction card"));
    }
    let (grid_n, bump_width, alpha_bound, env_width, t0) = match card.gen {
        GenParams::Diffraction { grid_n, bump_width, alpha_bound, env_width, t0 } => {
            (grid_n, bump_width, alpha_bound, env_width, t0)
        }
        _ => return Err(SetONetError::validation("card generator params are not diffraction")),
    };
    let m = card.m;
    let mut bumps = Array2::zeros((m, 2));
    let mut alphas = vec![0.0; m];
    let widths = vec![bump_width; m];
    for i in 0..m {
        bumps[[i, 0]] = rng.random_range(0.0..1.0);
        bumps[[i, 1]] = rng.random_range(0.0..1.0);
        alphas[i] = rng.random_range(-alpha_bound..alpha_bound);
    }

    let psi0 = initial_field(grid_n, &bumps, &alphas, &widths, env_width);
    let psi = propagate_free_schrodinger(&psi0, t0)?;

    let mut targets = Array2::zeros((grid_n * grid_n, 2));
    for a in 0..grid_n {
        for b in 0..grid_n {
            let z = psi[[a, b]];
            targets[[a * grid_n + b, 0]] = z.re;
            targets[[a * grid_n + b, 1]] = z.im;
        }
    }

    let mut values = Array2::zeros((m, 2));
    for i in 0..m {
        values[[i, 0]] = alphas[i];
        values[[i, 1]] = widths[i];
    }
    let sensors = card.sensor_set(bumps, values)?;
    Ok(OperatorSample {
        sensors,
        queries: diffraction_queries(grid_n),
        targets,
        extra: Some(Array1::from(alphas)),
        aux: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_rng;
    use ndarray::array;

    #[test]
    fn wrap_picks_the_minimal_image() {
        // 0.9 - 0.1 = 0.8 wraps to -0.2 on the torus.
        assert!((wrap_torus(0.9 - 0.1) - (-0.2)).abs() < 1e-15);
        assert!((wrap_torus(-0.8) - 0.2).abs() < 1e-15);
        assert_eq!(wrap_torus(0.25), 0.25);
        assert_eq!(wrap_torus(0.0), 0.0);
        // Wrapped displacement never exceeds half the period.
        for k in -20..=20 {
            let d = 0.13 * k as f64;
            assert!(wrap_torus(d).abs() <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn zero_phase_gives_a_real_initial_field() {
        let bumps = array![[0.3, 0.3], [0.7, 0.6]];
        let psi = initial_field(32, &bumps, &[0.0, 0.0], &[0.4, 0.4], 0.2);
        assert!(psi.iter().all(|z| z.im == 0.0 && z.re > 0.0));
    }

    #[test]
    fn propagation_conserves_the_discrete_l2_norm() {
        let bumps = array![[0.2, 0.8], [0.5, 0.1], [0.9, 0.4]];
        let psi0 = initial_field(64, &bumps, &[1.2, -0.7, 0.4], &[0.4; 3], 0.2);
        let before = grid_l2(&psi0);
        for t0 in [0.01, 0.1, 1.0] {
            let after = grid_l2(&propagate_free_schrodinger(&psi0, t0).unwrap());
            assert!(
                ((after - before) / before).abs() < 1e-12,
                "norm drifted from {before} to {after} at t0 = {t0}"
            );
        }
    }

    #[test]
    fn zero_time_is_the_exact_identity() {
        let bumps = array![[0.4, 0.2]];
        let psi0 = initial_field(16, &bumps, &[0.9], &[0.4], 0.2);
        let psi = propagate_free_schrodinger(&psi0, 0.0).unwrap();
        assert_eq!(psi, psi0);
    }

    /// The spectral step must agree with the analytic evolution of a single
    /// Fourier mode: exp(i 2 pi k . x) picks up phase -|2 pi k|^2 t0 / 2.
    #[test]
    fn plane_wave_picks_up_the_analytic_phase() {
        let n = 32;
        let (kx, ky) = (3.0, -2.0);
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut psi0 = Array2::from_elem((n, n), Complex64::ZERO);
        for a in 0..n {
            for b in 0..n {
                let x = a as f64 / n as f64;
                let y = b as f64 / n as f64;
                psi0[[a, b]] = Complex64::from_polar(1.0, two_pi * (kx * x + ky * y));
            }
        }
        let t0 = 0.05;
        let psi = propagate_free_schrodinger(&psi0, t0).unwrap();
        let xi2 = (two_pi * kx).powi(2) + (two_pi * ky).powi(2);
        let expect_phase = -0.5 * xi2 * t0;
        for a in 0..n {
            for b in 0..n {
                let x = a as f64 / n as f64;
                let y = b as f64 / n as f64;
                let want =
                    Complex64::from_polar(1.0, two_pi * (kx * x + ky * y) + expect_phase);
                let got = psi[[a, b]];
                assert!((got - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn sample_has_published_shapes_and_is_reproducible() {
        let mut card = BenchmarkCard::for_benchmark(BenchmarkId::Diffraction);
        // Shrink the grid to keep the test fast; contract shapes follow card.
        if let GenParams::Diffraction { ref mut grid_n, .. } = card.gen {
            *grid_n = 32;
        }
        card.n_q = 32 * 32;
        let s1 = diffraction_sample(&card, &mut sample_rng(13, 2)).unwrap();
        let s2 = diffraction_sample(&card, &mut sample_rng(13, 2)).unwrap();
        s1.validate(&card).unwrap();
        assert_eq!(s1.sensors.len(), 10);
        assert_eq!(s1.sensors.values.ncols(), 2);
        assert_eq!(s1.targets.dim(), (1024, 2));
        assert_eq!(s1.sensors.values, s2.sensors.values);
        assert_eq!(s1.targets, s2.targets);
        // Widths are the fixed 0.4; phases span (-pi/2, pi/2).
        for i in 0..10 {
            assert_eq!(s1.sensors.values[[i, 1]], 0.4);
            assert!(s1.sensors.values[[i, 0]].abs() < std::f64::consts::FRAC_PI_2);
        }
    }
}
