//! Entropic optimal transport ground truth.
//!
//! Source density: balanced two-Gaussian mixture (means Uniform[-2,2]^2,
//! diagonal covariances in [0.1, 1.0]); target: N(0, 0.5 I). Both are
//! discretized on a uniform grid of cell centers over [-5, 5]^2. Log-domain
//! Sinkhorn drives the coupling marginals to the discretized densities; the
//! barycentric map yields a velocity field that is bilinearly interpolated
//! at off-grid queries.
//!
//! The squared-distance cost is evaluated on the fly; no n^2 matrix is ever
//! stored, so the solver streams at O(n) memory.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{BenchmarkCard, GenParams, OperatorSample};
use crate::config::BenchmarkId;
use crate::error::{Result, SetONetError};

/// Converged dual potentials of an entropic transport problem, with the
/// coupling implicitly P_ij = exp((f_i + g_j - C_ij) / eps).
#[derive(Debug, Clone)]
pub struct SinkhornPotentials {
    pub f: Array1<f64>,
    pub g: Array1<f64>,
    pub eps: f64,
    pub iterations: usize,
    /// L1 error of the column marginal at the stopping point; rows are
    /// exact by construction of the final f update.
    pub marginal_l1: f64,
}

/// Entropic epsilon rule: 5e-2 relative to the squared-distance scale of
/// the fixed target density, tr Cov(rho_1) = 2 * 0.5 = 1.
pub const OT_TARGET_TOTAL_VARIANCE: f64 = 1.0;

/// Velocity entries are zeroed on cells carrying less than this fraction of
/// the peak source mass; the barycentric quotient is meaningless there.
pub const MASS_FLOOR_REL: f64 = 1e-6;

fn logsumexp(s: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in s {
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = s.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-domain Sinkhorn on discrete measures `a` at points `xs` and `b` at
/// points `ys` with squared Euclidean cost. Stops when the column-marginal
/// L1 error falls below `tol` (row marginals are exact after each f
/// update). Zero-mass atoms are carried as -inf potentials.
pub fn sinkhorn_log(
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornPotentials> {
    let (pots, _) = sinkhorn_log_warm(xs, ys, a, b, eps, max_iters, tol, None)?;
    if pots.marginal_l1 >= tol {
        return Err(SetONetError::numerical(format!(
            "Sinkhorn did not reach marginal L1 {tol:e} in {max_iters} iterations \
             (reached {:e})",
            pots.marginal_l1
        )));
    }
    Ok(pots)
}

/// One fixed-eps run, optionally warm-started; returns the potentials even
/// when the tolerance was not reached so callers can chain epsilon stages.
#[allow(clippy::too_many_arguments)]
fn sinkhorn_log_warm(
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    max_iters: usize,
    tol: f64,
    warm: Option<(Array1<f64>, Array1<f64>)>,
) -> Result<(SinkhornPotentials, bool)> {
    let n_a = xs.nrows();
    let n_b = ys.nrows();
    if a.len() != n_a || b.len() != n_b {
        return Err(SetONetError::validation("one mass per support point required"));
    }
    if xs.ncols() != ys.ncols() {
        return Err(SetONetError::validation("support dimensions differ"));
    }
    if !(eps > 0.0) || !(tol > 0.0) {
        return Err(SetONetError::validation("eps and tol must be positive"));
    }
    for m in [a, b] {
        if m.iter().any(|&v| v < 0.0 || !v.is_finite()) || m.sum() <= 0.0 {
            return Err(SetONetError::validation(
                "masses must be nonnegative, finite, with positive sum",
            ));
        }
    }
    let la: Vec<f64> = a.iter().map(|&v| v.ln()).collect();
    let lb: Vec<f64> = b.iter().map(|&v| v.ln()).collect();
    let (mut f, mut g) = warm.map(|(f, g)| (f, g)).unwrap_or_else(|| {
        (Array1::zeros(n_a), Array1::zeros(n_b))
    });
    // Zero-mass atoms never receive mass.
    for i in 0..n_a {
        if a[i] == 0.0 {
            f[i] = f64::NEG_INFINITY;
        }
    }
    for j in 0..n_b {
        if b[j] == 0.0 {
            g[j] = f64::NEG_INFINITY;
        }
    }

    let nx: Vec<f64> = xs.rows().into_iter().map(|r| r.dot(&r)).collect();
    let ny: Vec<f64> = ys.rows().into_iter().map(|r| r.dot(&r)).collect();
    let dim = xs.ncols();
    let inv_eps = 1.0 / eps;
    let mut scratch = vec![0.0f64; n_a.max(n_b)];
    let mut err_b = f64::INFINITY;

    for iter in 0..max_iters {
        // f update: rows become exact for the current g.
        for i in 0..n_a {
            if a[i] == 0.0 {
                continue;
            }
            let xi = xs.row(i);
            for j in 0..n_b {
                let mut dot = 0.0;
                for d in 0..dim {
                    dot += xi[d] * ys[[j, d]];
                }
                let cost = nx[i] + ny[j] - 2.0 * dot;
                scratch[j] = (g[j] - cost) * inv_eps;
            }
            f[i] = eps * (la[i] - logsumexp(&scratch[..n_b]));
        }

        // g pass: column sums of the current coupling come for free.
        err_b = 0.0;
        for j in 0..n_b {
            let yj = ys.row(j);
            for i in 0..n_a {
                let mut dot = 0.0;
                for d in 0..dim {
                    dot += xs[[i, d]] * yj[d];
                }
                let cost = nx[i] + ny[j] - 2.0 * dot;
                scratch[i] = (f[i] - cost) * inv_eps;
            }
            let lse = logsumexp(&scratch[..n_a]);
            let col_sum = if g[j] == f64::NEG_INFINITY && lse == f64::NEG_INFINITY {
                0.0
            } else {
                (g[j] * inv_eps + lse).exp()
            };
            err_b += (col_sum - b[j]).abs();
            if b[j] > 0.0 {
                g[j] = eps * (lb[j] - lse);
            }
        }
        if err_b < tol {
            // Re-tighten rows against the g that achieved the tolerance.
            for i in 0..n_a {
                if a[i] == 0.0 {
                    continue;
                }
                let xi = xs.row(i);
                for j in 0..n_b {
                    let mut dot = 0.0;
                    for d in 0..dim {
                        dot += xi[d] * ys[[j, d]];
                    }
                    let cost = nx[i] + ny[j] - 2.0 * dot;
                    scratch[j] = (g[j] - cost) * inv_eps;
                }
                f[i] = eps * (la[i] - logsumexp(&scratch[..n_b]));
            }
            return Ok((
                SinkhornPotentials { f, g, eps, iterations: iter + 1, marginal_l1: err_b },
                true,
            ));
        }
    }
    Ok((
        SinkhornPotentials { f, g, eps, iterations: max_iters, marginal_l1: err_b },
        false,
    ))
}

/// Epsilon-scaled driver: warm-starts from a few coarser-eps stages, then
/// polishes at the requested eps to `tol`. Same contract as [`sinkhorn_log`]
/// with a total iteration budget of `max_iters`.
pub fn sinkhorn_scaled(
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornPotentials> {
    let mut stages = vec![eps];
    let mut e = eps * 8.0;
    while stages.len() < 5 {
        stages.push(e);
        e *= 8.0;
    }
    stages.reverse();
    let per_stage = 30usize;
    let mut warm: Option<(Array1<f64>, Array1<f64>)> = None;
    let mut spent = 0usize;
    let mut total_iters = 0usize;
    for (k, &stage_eps) in stages.iter().enumerate() {
        let last = k + 1 == stages.len();
        let budget = if last {
            max_iters.saturating_sub(spent).max(1)
        } else {
            per_stage.min(max_iters.saturating_sub(spent)).max(1)
        };
        let stage_tol = if last { tol } else { tol.max(1e-3) };
        let (pots, converged) =
            sinkhorn_log_warm(xs, ys, a, b, stage_eps, budget, stage_tol, warm)?;
        spent += pots.iterations;
        total_iters += pots.iterations;
        if last {
            if !converged {
                return Err(SetONetError::numerical(format!(
                    "Sinkhorn did not reach marginal L1 {tol:e} within {max_iters} total \
                     iterations (reached {:e})",
                    pots.marginal_l1
                )));
            }
            return Ok(SinkhornPotentials { iterations: total_iters, ..pots });
        }
        warm = Some((pots.f, pots.g));
    }
    unreachable!("last stage returns")
}

/// Row and column marginal L1 errors plus the smallest coupling entry,
/// computed in one streaming pass.
pub struct CouplingStats {
    pub err_a: f64,
    pub err_b: f64,
    pub min_entry: f64,
}

pub fn coupling_marginals(
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    pots: &SinkhornPotentials,
) -> CouplingStats {
    let n_a = xs.nrows();
    let n_b = ys.nrows();
    let dim = xs.ncols();
    let inv_eps = 1.0 / pots.eps;
    let mut col_sums = vec![0.0f64; n_b];
    let mut err_a = 0.0;
    let mut min_entry = f64::INFINITY;
    for i in 0..n_a {
        let xi = xs.row(i);
        let nxi = xi.dot(&xi);
        let mut row_sum = 0.0;
        for j in 0..n_b {
            let yj = ys.row(j);
            let mut dot = 0.0;
            for d in 0..dim {
                dot += xi[d] * yj[d];
            }
            let cost = nxi + yj.dot(&yj) - 2.0 * dot;
            let e = (pots.f[i] + pots.g[j] - cost) * inv_eps;
            let p = if e == f64::NEG_INFINITY { 0.0 } else { e.exp() };
            row_sum += p;
            col_sums[j] += p;
            min_entry = min_entry.min(p);
        }
        err_a += (row_sum - a[i]).abs();
    }
    let err_b = col_sums.iter().zip(b).map(|(s, m)| (s - m).abs()).sum();
    CouplingStats { err_a, err_b, min_entry }
}

/// Barycentric displacement T(x_i) - x_i at every source point; rows with
/// less than [`MASS_FLOOR_REL`] of the peak mass are zeroed.
pub fn barycentric_velocity(
    xs: &Array2<f64>,
    ys: &Array2<f64>,
    a: &Array1<f64>,
    pots: &SinkhornPotentials,
) -> Array2<f64> {
    let n_a = xs.nrows();
    let n_b = ys.nrows();
    let dim = xs.ncols();
    let inv_eps = 1.0 / pots.eps;
    let floor = MASS_FLOOR_REL * a.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut vel = Array2::zeros((n_a, dim));
    for i in 0..n_a {
        if a[i] <= floor {
            continue;
        }
        let xi = xs.row(i);
        let nxi = xi.dot(&xi);
        let mut num = vec![0.0f64; dim];
        let mut den = 0.0;
        for j in 0..n_b {
            let yj = ys.row(j);
            let mut dot = 0.0;
            for d in 0..dim {
                dot += xi[d] * yj[d];
            }
            let cost = nxi + yj.dot(&yj) - 2.0 * dot;
            let e = (pots.f[i] + pots.g[j] - cost) * inv_eps;
            if e == f64::NEG_INFINITY {
                continue;
            }
            let p = e.exp();
            den += p;
            for d in 0..dim {
                num[d] += p * yj[d];
            }
        }
        if den > 0.0 {
            for d in 0..dim {
                vel[[i, d]] = num[d] / den - xi[d];
            }
        }
    }
    vel
}

/// Cell-center coordinates of an n-cell axis over [lo, hi].
pub fn grid_centers(n: usize, lo: f64, hi: f64) -> Array1<f64> {
    let cell = (hi - lo) / n as f64;
    Array1::from_iter((0..n).map(|i| lo + (i as f64 + 0.5) * cell))
}

/// Row-major (x outer, y inner) lattice of cell centers on [lo, hi]^2.
pub fn grid_points_2d(n: usize, lo: f64, hi: f64) -> Array2<f64> {
    let c = grid_centers(n, lo, hi);
    let mut pts = Array2::zeros((n * n, 2));
    for i in 0..n {
        for j in 0..n {
            pts[[i * n + j, 0]] = c[i];
            pts[[i * n + j, 1]] = c[j];
        }
    }
    pts
}

/// Bilinear interpolation of per-point vectors on the cell-center lattice,
/// clamped at the boundary cells.
pub fn bilinear_on_grid(
    field: &Array2<f64>,
    n: usize,
    lo: f64,
    hi: f64,
    queries: &Array2<f64>,
) -> Array2<f64> {
    let cell = (hi - lo) / n as f64;
    let dim = field.ncols();
    let mut out = Array2::zeros((queries.nrows(), dim));
    for (qi, q) in queries.rows().into_iter().enumerate() {
        let tx = ((q[0] - lo) / cell - 0.5).clamp(0.0, (n - 1) as f64);
        let ty = ((q[1] - lo) / cell - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = (tx as usize).min(n - 2);
        let j0 = (ty as usize).min(n - 2);
        let fx = tx - i0 as f64;
        let fy = ty - j0 as f64;
        for d in 0..dim {
            let v00 = field[[i0 * n + j0, d]];
            let v10 = field[[(i0 + 1) * n + j0, d]];
            let v01 = field[[i0 * n + j0 + 1, d]];
            let v11 = field[[(i0 + 1) * n + j0 + 1, d]];
            out[[qi, d]] = v00 * (1.0 - fx) * (1.0 - fy)
                + v10 * fx * (1.0 - fy)
                + v01 * (1.0 - fx) * fy
                + v11 * fx * fy;
        }
    }
    out
}

/// Latent mixture parameters of one source density.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MixtureParams {
    pub mu1: [f64; 2],
    pub s1: [f64; 2],
    pub mu2: [f64; 2],
    pub s2: [f64; 2],
}

impl MixtureParams {
    fn density(&self, x: f64, y: f64) -> f64 {
        let comp = |mu: [f64; 2], s: [f64; 2]| {
            let dx = x - mu[0];
            let dy = y - mu[1];
            (-(dx * dx / s[0] + dy * dy / s[1]) / 2.0).exp()
                / (2.0 * std::f64::consts::PI * (s[0] * s[1]).sqrt())
        };
        0.5 * comp(self.mu1, self.s1) + 0.5 * comp(self.mu2, self.s2)
    }

    fn to_vec(self) -> Vec<f64> {
        vec![
            self.mu1[0], self.mu1[1], self.s1[0], self.s1[1],
            self.mu2[0], self.mu2[1], self.s2[0], self.s2[1],
        ]
    }

    /// One point drawn from the mixture, rejection-sampled into the box.
    fn draw(&self, lo: f64, hi: f64, rng: &mut impl Rng) -> [f64; 2] {
        loop {
            let (mu, s) = if rng.random_range(0.0..1.0) < 0.5 {
                (self.mu1, self.s1)
            } else {
                (self.mu2, self.s2)
            };
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let x = mu[0] + s[0].sqrt() * z0;
            let y = mu[1] + s[1].sqrt() * z1;
            if x >= lo && x <= hi && y >= lo && y <= hi {
                return [x, y];
            }
        }
    }
}

fn target_density(x: f64, y: f64, var: f64) -> f64 {
    (-(x * x + y * y) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var)
}

/// Ground-truth velocity field for one mixture instance on an n x n grid.
pub(crate) fn ot_ground_truth(
    mix: &MixtureParams,
    grid_n: usize,
    lo: f64,
    hi: f64,
    target_var: f64,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(Array2<f64>, SinkhornPotentials)> {
    let pts = grid_points_2d(grid_n, lo, hi);
    let mut a = Array1::zeros(grid_n * grid_n);
    let mut b = Array1::zeros(grid_n * grid_n);
    for (r, p) in pts.rows().into_iter().enumerate() {
        a[r] = mix.density(p[0], p[1]);
        b[r] = target_density(p[0], p[1], target_var);
    }
    a /= a.sum();
    b /= b.sum();
    let pots = sinkhorn_scaled(&pts, &pts, &a, &b, eps, max_iters, tol)?;
    let vel = barycentric_velocity(&pts, &pts, &a, &pots);
    Ok((vel, pots))
}

/// One dataset sample: 512 unit-weight draws from the mixture as sensors,
/// 1024 independent draws as queries, displacement targets from the
/// bilinearly interpolated grid velocity, and the grid velocity itself as
/// the stored auxiliary field.
pub fn ot_sample(card: &BenchmarkCard, rng: &mut impl Rng) -> Result<OperatorSample> {
    if card.bench != BenchmarkId::OptimalTransport {
        return Err(SetONetError::validation("transport sampler needs a transport card"));
    }
    let (grid_n, eps_rel, max_iters, marginal_tol, mean_bound, cov_lo, cov_hi, target_var) =
        match card.gen {
            GenParams::Ot {
                grid_n,
                eps_rel,
                max_iters,
                marginal_tol,
                mean_bound,
                cov_lo,
                cov_hi,
                target_var,
            } => (grid_n, eps_rel, max_iters, marginal_tol, mean_bound, cov_lo, cov_hi, target_var),
            _ => return Err(SetONetError::validation("card generator params are not transport")),
        };
    let (lo, hi) = match card.sensor_domain {
        crate::sensors::SensorDomain::Box2 { x0, x1, .. } => (x0, x1),
        _ => return Err(SetONetError::validation("transport domain must be a box")),
    };
    // Draw order is part of the format: mu1, s1, mu2, s2, then sensors,
    // then queries.
    let mu1 = [
        rng.random_range(-mean_bound..=mean_bound),
        rng.random_range(-mean_bound..=mean_bound),
    ];
    let s1 = [rng.random_range(cov_lo..=cov_hi), rng.random_range(cov_lo..=cov_hi)];
    let mu2 = [
        rng.random_range(-mean_bound..=mean_bound),
        rng.random_range(-mean_bound..=mean_bound),
    ];
    let s2 = [rng.random_range(cov_lo..=cov_hi), rng.random_range(cov_lo..=cov_hi)];
    let mix = MixtureParams { mu1, s1, mu2, s2 };

    // eps_rel is relative to the target's total variance (= 1 for the
    // published card), making the absolute eps instance-independent.
    let eps_abs = eps_rel * OT_TARGET_TOTAL_VARIANCE;
    let (vel, _pots) =
        ot_ground_truth(&mix, grid_n, lo, hi, target_var, eps_abs, max_iters, marginal_tol)?;

    let m = card.m;
    let mut locations = Array2::zeros((m, 2));
    for i in 0..m {
        let p = mix.draw(lo, hi, rng);
        locations[[i, 0]] = p[0];
        locations[[i, 1]] = p[1];
    }
    let values = Array2::ones((m, 1));

    let n_q = card.n_q;
    let mut queries = Array2::zeros((n_q, 2));
    for i in 0..n_q {
        let p = mix.draw(lo, hi, rng);
        queries[[i, 0]] = p[0];
        queries[[i, 1]] = p[1];
    }
    let targets = bilinear_on_grid(&vel, grid_n, lo, hi, &queries);

    let sensors = card.sensor_set(locations, values)?;
    Ok(OperatorSample {
        sensors,
        queries,
        targets,
        extra: Some(Array1::from(mix.to_vec())),
        aux: Some(Array1::from_iter(vel.iter().copied())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_rng;

    fn centered_mixture(var: f64) -> MixtureParams {
        MixtureParams { mu1: [0.0, 0.0], s1: [var, var], mu2: [0.0, 0.0], s2: [var, var] }
    }

    #[test]
    fn identity_problem_has_near_zero_displacement() {
        let mix = centered_mixture(0.5);
        let (vel, pots) =
            ot_ground_truth(&mix, 40, -5.0, 5.0, 0.5, 0.05, 2000, 1e-6).unwrap();
        assert!(pots.marginal_l1 < 1e-6);
        let max_disp = vel.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max_disp < 0.2, "identity displacement reached {max_disp}");
    }

    #[test]
    fn translated_gaussian_transports_by_the_translation() {
        let mix = MixtureParams {
            mu1: [1.0, 0.0],
            s1: [0.5, 0.5],
            mu2: [1.0, 0.0],
            s2: [0.5, 0.5],
        };
        let grid_n = 40;
        let (vel, _) = ot_ground_truth(&mix, grid_n, -5.0, 5.0, 0.5, 0.05, 2000, 1e-6).unwrap();
        let pts = grid_points_2d(grid_n, -5.0, 5.0);
        let mut a = Array1::zeros(grid_n * grid_n);
        for (r, p) in pts.rows().into_iter().enumerate() {
            a[r] = mix.density(p[0], p[1]);
        }
        a /= a.sum();
        // Mass-weighted mean displacement is the translation exactly; the
        // entropic contraction cancels on average.
        let mut mean = [0.0f64; 2];
        for i in 0..a.len() {
            mean[0] += a[i] * vel[[i, 0]];
            mean[1] += a[i] * vel[[i, 1]];
        }
        assert!(
            (mean[0] + 1.0).abs() < 0.1 && mean[1].abs() < 0.05,
            "mean displacement ({}, {})",
            mean[0],
            mean[1]
        );
        // Near the mode the map is the translation itself.
        let peak = a.iter().cloned().fold(0.0f64, f64::max);
        for i in 0..a.len() {
            if a[i] >= 0.5 * peak {
                assert!(
                    (vel[[i, 0]] + 1.0).abs() < 0.2 && vel[[i, 1]].abs() < 0.2,
                    "bulk displacement ({}, {}) at mass {}",
                    vel[[i, 0]],
                    vel[[i, 1]],
                    a[i] / peak
                );
            }
        }
    }

    #[test]
    fn coupling_is_nonnegative_with_tight_marginals() {
        let mix = MixtureParams {
            mu1: [-1.0, 0.5],
            s1: [0.3, 0.8],
            mu2: [1.5, -1.0],
            s2: [0.6, 0.2],
        };
        let grid_n = 24;
        let pts = grid_points_2d(grid_n, -5.0, 5.0);
        let mut a = Array1::zeros(grid_n * grid_n);
        let mut b = Array1::zeros(grid_n * grid_n);
        for (r, p) in pts.rows().into_iter().enumerate() {
            a[r] = mix.density(p[0], p[1]);
            b[r] = target_density(p[0], p[1], 0.5);
        }
        a /= a.sum();
        b /= b.sum();
        let pots = sinkhorn_scaled(&pts, &pts, &a, &b, 0.05, 2000, 1e-6).unwrap();
        let stats = coupling_marginals(&pts, &pts, &a, &b, &pots);
        assert!(stats.err_a < 1e-6, "row marginal error {:e}", stats.err_a);
        assert!(stats.err_b < 1e-6, "column marginal error {:e}", stats.err_b);
        assert!(stats.min_entry >= 0.0);
    }

    #[test]
    fn bilinear_interpolation_is_exact_on_nodes_and_linear_fields() {
        let n = 8;
        let pts = grid_points_2d(n, -5.0, 5.0);
        // field(x, y) = (2x - y, x + 3y) is reproduced exactly by bilinear
        // interpolation away from clamping.
        let mut field = Array2::zeros((n * n, 2));
        for (r, p) in pts.rows().into_iter().enumerate() {
            field[[r, 0]] = 2.0 * p[0] - p[1];
            field[[r, 1]] = p[0] + 3.0 * p[1];
        }
        let queries = ndarray::array![[0.3, 0.4], [-2.0, 1.7], [3.9, -3.9]];
        let out = bilinear_on_grid(&field, n, -5.0, 5.0, &queries);
        for (qi, q) in queries.rows().into_iter().enumerate() {
            assert!((out[[qi, 0]] - (2.0 * q[0] - q[1])).abs() < 1e-12);
            assert!((out[[qi, 1]] - (q[0] + 3.0 * q[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_shapes_and_reproducibility() {
        let mut card = BenchmarkCard::for_benchmark(BenchmarkId::OptimalTransport);
        // Small grid and few points keep the solver fast; contract shapes
        // still follow the card.
        if let GenParams::Ot { ref mut grid_n, .. } = card.gen {
            *grid_n = 16;
        }
        card.m = 64;
        card.n_q = 128;
        let s1 = ot_sample(&card, &mut sample_rng(21, 3)).unwrap();
        let s2 = ot_sample(&card, &mut sample_rng(21, 3)).unwrap();
        s1.validate(&card).unwrap();
        assert_eq!(s1.sensors.len(), 64);
        assert!(s1.sensors.values.iter().all(|&v| v == 1.0));
        assert_eq!(s1.targets.dim(), (128, 2));
        assert_eq!(s1.aux.as_ref().unwrap().len(), 16 * 16 * 2);
        assert_eq!(s1.targets, s2.targets);
        assert_eq!(s1.sensors.locations, s2.sensors.locations);
    }
}
