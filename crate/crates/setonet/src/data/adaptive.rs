//! Field-adaptive query selection on the unit square.
//!
//! Queries are a fixed 25x25 seed grid plus draws from a 128x128 proposal
//! lattice, weighted by exp(beta * m) where m is the min-max normalized
//! field magnitude at the proposal point. Draws are without replacement and
//! skip proposal cells already covered by a seed point.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Result, SetONetError};

/// Seed grid is SEED_GRID_SIDE^2 = 625 points, endpoints included.
pub const SEED_GRID_SIDE: usize = 25;
/// Proposal lattice of cell centers, PROPOSAL_SIDE^2 cells.
pub const PROPOSAL_SIDE: usize = 128;

/// Returns exactly `n_q` query points: the 625 seed points first (row-major
/// in x, then y), then `n_q - 625` weighted draws from the proposal.
///
/// `field` is evaluated at every proposal cell center to build the weights;
/// the caller passes the benchmark's analytic field.
pub fn adaptive_query_sample(
    field: impl Fn(f64, f64) -> f64,
    n_q: usize,
    beta: f64,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    let seeds = SEED_GRID_SIDE * SEED_GRID_SIDE;
    if n_q < seeds {
        return Err(SetONetError::validation(format!(
            "adaptive sampler needs at least {seeds} queries, got {n_q}"
        )));
    }
    if !beta.is_finite() || beta < 0.0 {
        return Err(SetONetError::validation("beta must be finite and nonnegative"));
    }
    let mut out = Array2::zeros((n_q, 2));
    let mut covered = vec![false; PROPOSAL_SIDE * PROPOSAL_SIDE];
    for i in 0..SEED_GRID_SIDE {
        for j in 0..SEED_GRID_SIDE {
            let x = i as f64 / (SEED_GRID_SIDE - 1) as f64;
            let y = j as f64 / (SEED_GRID_SIDE - 1) as f64;
            let row = i * SEED_GRID_SIDE + j;
            out[[row, 0]] = x;
            out[[row, 1]] = y;
            covered[cell_of(x) * PROPOSAL_SIDE + cell_of(y)] = true;
        }
    }

    // Field magnitudes at all proposal centers, min-max normalized.
    let mut mags = vec![0.0f64; PROPOSAL_SIDE * PROPOSAL_SIDE];
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for a in 0..PROPOSAL_SIDE {
        for b in 0..PROPOSAL_SIDE {
            let v = field(center_of(a), center_of(b)).abs();
            if !v.is_finite() {
                return Err(SetONetError::numerical(
                    "field evaluation produced a nonfinite proposal weight",
                ));
            }
            mags[a * PROPOSAL_SIDE + b] = v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };

    let free: Vec<usize> = (0..mags.len()).filter(|&c| !covered[c]).collect();
    let extra = n_q - seeds;
    if extra > free.len() {
        return Err(SetONetError::validation(format!(
            "requested {extra} proposal draws but only {} uncovered cells remain",
            free.len()
        )));
    }
    let weights: Vec<f64> =
        free.iter().map(|&c| (beta * (mags[c] - lo) / span).exp()).collect();
    let picks = weighted_indices_without_replacement(&weights, extra, rng);
    for (k, &wi) in picks.iter().enumerate() {
        let cell = free[wi];
        out[[seeds + k, 0]] = center_of(cell / PROPOSAL_SIDE);
        out[[seeds + k, 1]] = center_of(cell % PROPOSAL_SIDE);
    }
    Ok(out)
}

fn cell_of(x: f64) -> usize {
    ((x * PROPOSAL_SIDE as f64) as usize).min(PROPOSAL_SIDE - 1)
}

fn center_of(cell: usize) -> f64 {
    (cell as f64 + 0.5) / PROPOSAL_SIDE as f64
}

/// Weighted sampling without replacement (exponential-key reservoir order):
/// each index draws key ln(U)/w and the k largest keys win, which realizes
/// successive draws proportional to weight among the remaining items. One
/// uniform per index keeps the stream layout independent of k.
pub(crate) fn weighted_indices_without_replacement(
    weights: &[f64],
    k: usize,
    rng: &mut impl Rng,
) -> Vec<usize> {
    debug_assert!(k <= weights.len());
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    keyed.truncate(k);
    keyed.into_iter().map(|(_, i)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_rng;
    use std::collections::HashSet;

    #[test]
    fn returns_exact_count_with_seed_grid_first() {
        let mut rng = sample_rng(1, 0);
        let q = adaptive_query_sample(|x, y| x + y, 1000, 4.0, &mut rng).unwrap();
        assert_eq!(q.nrows(), 1000);
        // First 625 rows are the uniform 25x25 grid with endpoints.
        assert_eq!((q[[0, 0]], q[[0, 1]]), (0.0, 0.0));
        assert_eq!((q[[624, 0]], q[[624, 1]]), (1.0, 1.0));
        let gap = 1.0 / 24.0;
        for i in 0..SEED_GRID_SIDE {
            for j in 0..SEED_GRID_SIDE {
                let r = i * SEED_GRID_SIDE + j;
                assert!((q[[r, 0]] - i as f64 * gap).abs() < 1e-15);
                assert!((q[[r, 1]] - j as f64 * gap).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn extra_points_are_distinct_uncovered_cell_centers() {
        let mut rng = sample_rng(2, 0);
        let q = adaptive_query_sample(|x, y| (10.0 * x * y).sin(), 4096, 4.0, &mut rng).unwrap();
        let mut seen = HashSet::new();
        for r in 625..4096 {
            let a = (q[[r, 0]] * PROPOSAL_SIDE as f64 - 0.5).round() as usize;
            let b = (q[[r, 1]] * PROPOSAL_SIDE as f64 - 0.5).round() as usize;
            // Exact cell center.
            assert!((q[[r, 0]] - center_of(a)).abs() < 1e-12);
            assert!((q[[r, 1]] - center_of(b)).abs() < 1e-12);
            assert!(seen.insert((a, b)), "cell drawn twice");
        }
        // No extra point falls in a seed-covered cell.
        let mut covered = HashSet::new();
        for i in 0..SEED_GRID_SIDE {
            for j in 0..SEED_GRID_SIDE {
                covered.insert((
                    cell_of(i as f64 / (SEED_GRID_SIDE - 1) as f64),
                    cell_of(j as f64 / (SEED_GRID_SIDE - 1) as f64),
                ));
            }
        }
        for cell in &seen {
            assert!(!covered.contains(cell));
        }
    }

    #[test]
    fn beta_zero_is_uniform_over_free_cells() {
        // With beta = 0 all weights are 1; the draw must not depend on the
        // field at all.
        let mut r1 = sample_rng(3, 0);
        let mut r2 = sample_rng(3, 0);
        let a = adaptive_query_sample(|x, _| 100.0 * x, 2000, 0.0, &mut r1).unwrap();
        let b = adaptive_query_sample(|_, y| -3.0 * y, 2000, 0.0, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_seeds_reproduce_identical_queries() {
        let f = |x: f64, y: f64| (x - 0.3).hypot(y - 0.7);
        let a = adaptive_query_sample(f, 3000, 9.0, &mut sample_rng(9, 4)).unwrap();
        let b = adaptive_query_sample(f, 3000, 9.0, &mut sample_rng(9, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overfull_requests_are_rejected() {
        let mut rng = sample_rng(0, 0);
        let err = adaptive_query_sample(|_, _| 0.0, 17_000, 1.0, &mut rng).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let err = adaptive_query_sample(|_, _| 0.0, 100, 1.0, &mut rng).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    /// Single weighted draws hit multinomial frequencies within 3 sigma.
    #[test]
    fn single_draw_frequencies_match_weights() {
        let weights = [1.0, 2.0, 4.0, 8.0, 1.0, 0.5];
        let total: f64 = weights.iter().sum();
        let mut rng = sample_rng(7, 0);
        let n = 10_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            let picks = weighted_indices_without_replacement(&weights, 1, &mut rng);
            counts[picks[0]] += 1;
        }
        for (i, &w) in weights.iter().enumerate() {
            let p = w / total;
            let mean = n as f64 * p;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let dev = (counts[i] as f64 - mean).abs();
            assert!(
                dev <= 3.0 * sigma,
                "index {i}: count {} vs mean {mean:.1} (3 sigma {:.1})",
                counts[i],
                3.0 * sigma
            );
        }
    }

    /// Without-replacement draws of k = n return every index.
    #[test]
    fn full_draw_returns_a_permutation() {
        let weights = [0.1, 5.0, 2.0, 2.0];
        let mut rng = sample_rng(8, 0);
        let mut picks = weighted_indices_without_replacement(&weights, 4, &mut rng);
        picks.sort_unstable();
        assert_eq!(picks, vec![0, 1, 2, 3]);
    }
}
