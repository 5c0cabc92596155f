//! Sensor sets and the sampling protocols (fixed, variable, drop-off).
//!
//! A sensor set is an unordered collection of (location, value) observations
//! of the input function, plus a nonnegative quadrature weight per sensor.
//! 1D weights are trapezoidal cell widths; higher dimensions use uniform
//! weights. Only relative weights matter downstream (the key-variant mixing
//! rule normalizes by their sum).

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SetONetError};

/// Floor applied to degenerate (zero-width) trapezoidal cells so the weight
/// sum stays strictly positive even with coincident sensor locations.
pub const WEIGHT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSet {
    /// M x d_x sensor coordinates.
    pub locations: Array2<f64>,
    /// M x d_u observed values.
    pub values: Array2<f64>,
    /// Length-M nonnegative weights with positive sum.
    pub weights: Array1<f64>,
}

impl SensorSet {
    pub fn new(locations: Array2<f64>, values: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let m = locations.nrows();
        if m == 0 {
            return Err(SetONetError::validation("sensor set must contain at least one sensor"));
        }
        if values.nrows() != m || weights.len() != m {
            return Err(SetONetError::validation(format!(
                "sensor set shape mismatch: {} locations, {} values, {} weights",
                m,
                values.nrows(),
                weights.len()
            )));
        }
        if locations.iter().any(|v| !v.is_finite()) || values.iter().any(|v| !v.is_finite()) {
            return Err(SetONetError::validation("sensor set contains nonfinite entries"));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(SetONetError::validation("sensor weights must be finite and nonnegative"));
        }
        if weights.sum() <= 0.0 {
            return Err(SetONetError::validation("sensor weights must have positive sum"));
        }
        Ok(Self { locations, values, weights })
    }

    pub fn with_uniform_weights(locations: Array2<f64>, values: Array2<f64>) -> Result<Self> {
        let m = locations.nrows();
        Self::new(locations, values, Array1::ones(m))
    }

    /// 1D constructor deriving trapezoidal weights from the locations.
    pub fn with_trapezoidal_weights(
        locations: Array2<f64>,
        values: Array2<f64>,
        a: f64,
        b: f64,
    ) -> Result<Self> {
        if locations.ncols() != 1 {
            return Err(SetONetError::validation("trapezoidal weights require 1D locations"));
        }
        let w = trapezoidal_weights(locations.column(0), a, b)?;
        Self::new(locations, values, w)
    }

    pub fn len(&self) -> usize {
        self.locations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coordinate_dim(&self) -> usize {
        self.locations.ncols()
    }

    pub fn value_dim(&self) -> usize {
        self.values.ncols()
    }

    /// Reorders sensors by `perm` (perm[i] = source index of output row i).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let gather = |src: &Array2<f64>| {
            let mut out = Array2::zeros(src.raw_dim());
            for (i, &j) in perm.iter().enumerate() {
                out.row_mut(i).assign(&src.row(j));
            }
            out
        };
        let mut w = Array1::zeros(self.weights.len());
        for (i, &j) in perm.iter().enumerate() {
            w[i] = self.weights[j];
        }
        Self { locations: gather(&self.locations), values: gather(&self.values), weights: w }
    }
}

/// Trapezoidal quadrature weights for scattered 1D locations on [a, b].
///
/// Each sensor owns the cell between the midpoints to its sorted neighbors,
/// with the first and last cells extending to the domain endpoints; a single
/// sensor owns the whole interval. Zero-width cells (coincident locations)
/// are floored at WEIGHT_FLOOR.
pub fn trapezoidal_weights(x: ArrayView1<f64>, a: f64, b: f64) -> Result<Array1<f64>> {
    let m = x.len();
    if m == 0 {
        return Err(SetONetError::validation("trapezoidal weights need at least one location"));
    }
    if !(a < b) {
        return Err(SetONetError::validation(format!("invalid interval [{a}, {b}]")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_unstable_by(|&i, &j| x[i].total_cmp(&x[j]));

    let mut w = Array1::zeros(m);
    let mut left = a;
    for (rank, &i) in order.iter().enumerate() {
        let right = if rank + 1 < m { 0.5 * (x[i] + x[order[rank + 1]]) } else { b };
        w[i] = (right - left).max(WEIGHT_FLOOR);
        left = right;
    }
    Ok(w)
}

/// Where sensors may be placed for a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SensorDomain {
    /// Continuous interval [a, b].
    Interval { a: f64, b: f64 },
    /// Uniform n-point grid on [a, b]; sensors are grid nodes.
    Grid1 { a: f64, b: f64, n: usize },
    /// Axis-aligned box [x0, x1] x [y0, y1].
    Box2 { x0: f64, x1: f64, y0: f64, y1: f64 },
}

impl SensorDomain {
    pub fn coordinate_dim(&self) -> usize {
        match self {
            SensorDomain::Interval { .. } | SensorDomain::Grid1 { .. } => 1,
            SensorDomain::Box2 { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolMode {
    Fixed,
    Variable,
    Dropoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorProtocol {
    pub mode: ProtocolMode,
    /// Nominal sensor count M.
    pub m: usize,
    /// Fraction of sensors dropped (drop-off mode); 0.2 in the reported runs.
    pub drop_rate: f64,
    /// RNG stream id, combined with the run seed for layout/drop draws.
    pub stream: u64,
}

impl SensorProtocol {
    pub fn fixed(m: usize) -> Self {
        Self { mode: ProtocolMode::Fixed, m, drop_rate: 0.0, stream: 0 }
    }

    pub fn variable(m: usize) -> Self {
        Self { mode: ProtocolMode::Variable, m, drop_rate: 0.0, stream: 0 }
    }

    pub fn dropoff(m: usize, drop_rate: f64) -> Self {
        Self { mode: ProtocolMode::Dropoff, m, drop_rate, stream: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(SetONetError::validation("protocol sensor count must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(SetONetError::validation(format!(
                "drop rate {} outside [0, 1)",
                self.drop_rate
            )));
        }
        Ok(())
    }
}

/// One seeded layout reused across all batches and epochs.
///
/// Continuous 1D domains draw a sorted uniform sample; grid domains take
/// linearly spaced indices; boxes draw uniform points.
pub fn sample_fixed_layout(domain: SensorDomain, m: usize, seed: u64) -> Result<Array2<f64>> {
    if m == 0 {
        return Err(SetONetError::validation("sensor count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match domain {
        SensorDomain::Interval { .. } | SensorDomain::Box2 { .. } => {
            Ok(draw_uniform_layout(domain, m, &mut rng))
        }
        SensorDomain::Grid1 { a, b, n } => {
            if m > n {
                return Err(SetONetError::validation(format!(
                    "cannot place {m} sensors on a {n}-point grid"
                )));
            }
            let mut out = Array2::zeros((m, 1));
            for j in 0..m {
                let idx = if m == 1 {
                    0
                } else {
                    ((j as f64) * ((n - 1) as f64) / ((m - 1) as f64)).round() as usize
                };
                out[[j, 0]] = a + (idx as f64) * (b - a) / ((n - 1) as f64);
            }
            Ok(out)
        }
    }
}

/// Fresh i.i.d. uniform layout shared by every sample in one batch.
pub fn resample_variable_layout(
    domain: SensorDomain,
    m: usize,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    if m == 0 {
        return Err(SetONetError::validation("sensor count must be at least 1"));
    }
    if let SensorDomain::Grid1 { a, b, n } = domain {
        if m > n {
            return Err(SetONetError::validation(format!(
                "cannot place {m} sensors on a {n}-point grid"
            )));
        }
        // Distinct grid nodes, sorted.
        let mut idx: Vec<usize> = (0..n).collect();
        let (chosen, _) = idx.partial_shuffle(rng, m);
        chosen.sort_unstable();
        let mut out = Array2::zeros((m, 1));
        for (j, &i) in chosen.iter().enumerate() {
            out[[j, 0]] = a + (i as f64) * (b - a) / ((n - 1) as f64);
        }
        return Ok(out);
    }
    Ok(draw_uniform_layout(domain, m, rng))
}

fn draw_uniform_layout(domain: SensorDomain, m: usize, rng: &mut impl Rng) -> Array2<f64> {
    match domain {
        SensorDomain::Interval { a, b } => {
            let mut xs: Vec<f64> = (0..m).map(|_| rng.random_range(a..b)).collect();
            xs.sort_unstable_by(f64::total_cmp);
            Array2::from_shape_vec((m, 1), xs).expect("shape")
        }
        SensorDomain::Box2 { x0, x1, y0, y1 } => {
            let mut out = Array2::zeros((m, 2));
            for mut row in out.rows_mut() {
                row[0] = rng.random_range(x0..x1);
                row[1] = rng.random_range(y0..y1);
            }
            out
        }
        SensorDomain::Grid1 { .. } => unreachable!("grid layouts handled by the caller"),
    }
}

/// Drops floor(rate * M) uniformly chosen sensors and fills each dropped slot
/// with its nearest retained sensor's (location, value, weight) triple, so the
/// output cardinality is exactly M. Ties go to the lowest retained index.
pub fn apply_dropoff(s: &SensorSet, rate: f64, rng: &mut impl Rng) -> Result<SensorSet> {
    if !(0.0..1.0).contains(&rate) {
        return Err(SetONetError::validation(format!("drop rate {rate} outside [0, 1)")));
    }
    let m = s.len();
    let n_drop = (rate * m as f64).floor() as usize;
    if n_drop == 0 {
        return Ok(s.clone());
    }
    if n_drop >= m {
        return Err(SetONetError::validation("drop rate would remove every sensor"));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    let (dropped, _) = idx.partial_shuffle(rng, n_drop);
    let mut is_dropped = vec![false; m];
    for &i in dropped.iter() {
        is_dropped[i] = true;
    }
    let retained: Vec<usize> = (0..m).filter(|&i| !is_dropped[i]).collect();

    let mut out = s.clone();
    for i in 0..m {
        if !is_dropped[i] {
            continue;
        }
        let j = nearest_retained(&s.locations, &retained, i);
        out.locations.row_mut(i).assign(&s.locations.row(j));
        out.values.row_mut(i).assign(&s.values.row(j));
        out.weights[i] = s.weights[j];
    }
    Ok(out)
}

/// Index of the retained sensor closest (Euclidean) to sensor `i`;
/// equidistant candidates resolve to the lowest index.
fn nearest_retained(locations: &Array2<f64>, retained: &[usize], i: usize) -> usize {
    debug_assert!(!retained.is_empty());
    let target = locations.row(i);
    let mut best = retained[0];
    let mut best_d2 = f64::INFINITY;
    for &j in retained {
        let d2: f64 = locations
            .row(j)
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        // Strict < keeps the lowest index on ties (retained is ascending).
        if d2 < best_d2 {
            best_d2 = d2;
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub count: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
}

/// Re-evaluates a trained model at each sensor count; `eval_at` returns one
/// MSE per seed. Mean and population std are aggregated per count.
pub fn sensor_count_ablation(
    counts: &[usize],
    mut eval_at: impl FnMut(usize) -> Result<Vec<f64>>,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(counts.len());
    for &count in counts {
        let mses = eval_at(count)?;
        if mses.is_empty() {
            return Err(SetONetError::validation("ablation evaluation returned no seeds"));
        }
        let n = mses.len() as f64;
        let mean = mses.iter().sum::<f64>() / n;
        let var = mses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        rows.push(AblationRow { count, mean_mse: mean, std_mse: var.sqrt() });
    }
    Ok(rows)
}
