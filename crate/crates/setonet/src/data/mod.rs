//! Benchmark dataset generation and storage.
//!
//! Covers the analytic 1D operator families, the nonlinear Darcy boundary
//! value problem, Green's-function point-source fields with adaptively
//! selected queries, spectral phase-screen diffraction, Sinkhorn optimal
//! transport, and the externally generated elastic-plate dataset.
//!
//! Every generator draws from an RNG stream derived from (master seed,
//! sample index), so a dataset is a pure function of its seed regardless of
//! generation order.

mod adaptive;
mod darcy;
mod diffraction;
mod elastic;
mod generate;
mod greens;
mod grf;
mod io;
mod ot;
mod poly;

pub use adaptive::{adaptive_query_sample, PROPOSAL_SIDE, SEED_GRID_SIDE};
pub use darcy::{darcy_residual_norm, solve_darcy_1d, solve_darcy_1d_with_tol};
pub use diffraction::{
    diffraction_queries, diffraction_sample, grid_l2, initial_field, propagate_free_schrodinger,
    wrap_torus,
};
pub use elastic::{load_elastic_dataset, ElasticSplits, Standardization};
pub use generate::{generate_dataset, DatasetSplit};
pub use greens::{advdiff_field, bessel_k0, heat_field};
pub use grf::{sample_grf, GrfSample, GrfSampler};
pub use io::{read_dataset, write_dataset, DatasetHeader, FORMAT_VERSION};
pub use ot::{
    barycentric_velocity, bilinear_on_grid, coupling_marginals, grid_points_2d, ot_sample,
    sinkhorn_log, sinkhorn_scaled, CouplingStats, SinkhornPotentials,
};
pub use poly::{gen_poly_family, poly_inputs, poly_targets, PolyCoeffs, PolyStream};

use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::BenchmarkId;
use crate::error::{Result, SetONetError};
use crate::sensors::{ProtocolMode, SensorDomain, SensorSet};

/// Version stamp written into dataset metadata; bump on any change that
/// alters generated bits.
pub const GENERATOR_VERSION: &str = "1";

/// Independent RNG stream for one sample of a generation run.
///
/// Streams of the same master seed never overlap, so parallel and serial
/// generation produce bitwise-identical datasets.
pub fn sample_rng(master_seed: u64, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(sample_index);
    rng
}

/// Generator parameters for one benchmark family, recorded verbatim in
/// dataset metadata so files are self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GenParams {
    /// Cubic-plus-sine function family on [-1, 1].
    Poly {
        /// Coefficients are Uniform[-bound, bound].
        coeff_bound: f64,
    },
    /// GRF forcing plus nonlinear Darcy solve on a uniform grid over [0, 1].
    Darcy { grid_n: usize, ell: f64, sigma2: f64 },
    /// Softened log Green's function of the 2D Laplacian.
    Heat {
        eps: f64,
        strength_lo: f64,
        strength_hi: f64,
        beta: f64,
    },
    /// Exact advection-diffusion Green's function with uniform wind.
    AdvDiff {
        d: f64,
        v: [f64; 2],
        clamp_radius: f64,
        strength_lo: f64,
        strength_hi: f64,
        beta: f64,
    },
    /// Periodic Gaussian phase screen propagated under free Schrodinger.
    Diffraction {
        grid_n: usize,
        bump_width: f64,
        alpha_bound: f64,
        env_width: f64,
        t0: f64,
    },
    /// Entropic optimal transport between a two-Gaussian mixture and a
    /// fixed centered Gaussian.
    Ot {
        grid_n: usize,
        /// Entropic epsilon as a fraction of the max squared-distance cost.
        eps_rel: f64,
        max_iters: usize,
        marginal_tol: f64,
        mean_bound: f64,
        cov_lo: f64,
        cov_hi: f64,
        /// Per-axis variance of the fixed target Gaussian.
        target_var: f64,
    },
    /// Externally generated plate data; loaded, never synthesized here.
    Elastic,
}

/// Everything needed to (re)generate or validate one benchmark dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCard {
    pub bench: BenchmarkId,
    pub d_x: usize,
    pub d_u: usize,
    pub d_y: usize,
    pub d_out: usize,
    /// Sensors per sample.
    pub m: usize,
    /// Queries per sample.
    pub n_q: usize,
    /// Basis size of the paired model; recorded for self-description.
    pub p: usize,
    /// Positional-embedding max frequency scale of the paired model.
    pub pe_max: f64,
    pub default_protocol: ProtocolMode,
    pub sensor_domain: SensorDomain,
    pub query_domain: SensorDomain,
    /// None marks an on-the-fly training stream (no materialized split).
    pub train_size: Option<usize>,
    pub test_size: usize,
    pub gen: GenParams,
}

impl BenchmarkCard {
    /// Card with the published defaults for a named benchmark.
    pub fn for_benchmark(bench: BenchmarkId) -> Self {
        use BenchmarkId::*;
        let unit_box = SensorDomain::Box2 { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        let (sensor_domain, query_domain) = match bench {
            Derivative | Integral => (
                SensorDomain::Interval { a: -1.0, b: 1.0 },
                SensorDomain::Interval { a: -1.0, b: 1.0 },
            ),
            Darcy => (
                SensorDomain::Grid1 { a: 0.0, b: 1.0, n: 501 },
                SensorDomain::Grid1 { a: 0.0, b: 1.0, n: 501 },
            ),
            // Loads live on the right edge x = 1; displacements on the plate.
            Elastic => (
                SensorDomain::Box2 { x0: 1.0, x1: 1.0, y0: 0.0, y1: 1.0 },
                unit_box,
            ),
            Heat | AdvectionDiffusion | Diffraction => (unit_box, unit_box),
            OptimalTransport => (
                SensorDomain::Box2 { x0: -5.0, x1: 5.0, y0: -5.0, y1: 5.0 },
                SensorDomain::Box2 { x0: -5.0, x1: 5.0, y0: -5.0, y1: 5.0 },
            ),
        };
        let m = bench.default_m();
        let gen = match bench {
            Derivative | Integral => GenParams::Poly { coeff_bound: 0.1 },
            Darcy => GenParams::Darcy { grid_n: 501, ell: 0.04, sigma2: 1.0 },
            Elastic => GenParams::Elastic,
            Heat => GenParams::Heat {
                eps: 0.1,
                strength_lo: 0.1,
                strength_hi: 1.0,
                beta: heat_beta(m),
            },
            AdvectionDiffusion => GenParams::AdvDiff {
                d: 0.1,
                v: [1.0, 0.0],
                clamp_radius: 1e-3,
                strength_lo: 0.1,
                strength_hi: 1.0,
                beta: 4.0,
            },
            Diffraction => GenParams::Diffraction {
                grid_n: 128,
                bump_width: 0.4,
                alpha_bound: std::f64::consts::FRAC_PI_2,
                env_width: 0.2,
                t0: 0.1,
            },
            OptimalTransport => GenParams::Ot {
                grid_n: 80,
                eps_rel: 5e-2,
                max_iters: 2000,
                marginal_tol: 1e-6,
                mean_bound: 2.0,
                cov_lo: 0.1,
                cov_hi: 1.0,
                target_var: 0.5,
            },
        };
        let (train_size, test_size) = bench.data_split();
        BenchmarkCard {
            bench,
            d_x: bench.d_x(),
            d_u: bench.d_u(),
            d_y: bench.d_y(),
            d_out: bench.d_out(),
            m,
            n_q: bench.default_n_q(),
            p: bench.p(),
            pe_max: bench.pe_max_scale(),
            default_protocol: ProtocolMode::Fixed,
            sensor_domain,
            query_domain,
            train_size,
            test_size,
        gen,
        }
    }

    /// Consistency against the named benchmark's fixed dimensions. Counts
    /// (M, N_q, sizes) may be overridden; dimensionalities may not.
    pub fn validate(&self) -> Result<()> {
        let b = self.bench;
        if self.d_x != b.d_x()
            || self.d_u != b.d_u()
            || self.d_y != b.d_y()
            || self.d_out != b.d_out()
        {
            return Err(SetONetError::validation(format!(
                "card dimensions ({}, {}, {}, {}) do not match benchmark {}",
                self.d_x,
                self.d_u,
                self.d_y,
                self.d_out,
                b.name()
            )));
        }
        if self.m == 0 || self.n_q == 0 || self.test_size == 0 {
            return Err(SetONetError::validation("card counts must be positive"));
        }
        if self.sensor_domain.coordinate_dim() != self.d_x
            || self.query_domain.coordinate_dim() != self.d_y
        {
            return Err(SetONetError::validation("card domain dimensions are inconsistent"));
        }
        if !(self.pe_max > 0.0) {
            return Err(SetONetError::validation("pe_max must be positive"));
        }
        Ok(())
    }

    /// Interval bounds when the sensor domain is one-dimensional.
    pub fn sensor_interval(&self) -> Option<(f64, f64)> {
        match self.sensor_domain {
            SensorDomain::Interval { a, b } => Some((a, b)),
            SensorDomain::Grid1 { a, b, .. } => Some((a, b)),
            SensorDomain::Box2 { .. } => None,
        }
    }

    /// Sensor set with the family's weight convention: trapezoidal on
    /// interval domains, unit weights otherwise.
    pub fn sensor_set(&self, locations: Array2<f64>, values: Array2<f64>) -> Result<SensorSet> {
        if self.bench.is_interval_family() {
            let (a, b) = self
                .sensor_interval()
                .ok_or_else(|| SetONetError::validation("interval family without 1D domain"))?;
            SensorSet::with_trapezoidal_weights(locations, values, a, b)
        } else {
            SensorSet::with_uniform_weights(locations, values)
        }
    }
}

/// Adaptive-query sharpness used for the multi-source heat benchmark.
pub fn heat_beta(m: usize) -> f64 {
    if m >= 30 {
        8.0
    } else {
        9.0
    }
}

/// One generated operator sample: an unordered sensor set and supervised
/// query targets, plus whatever latent parameters produced it.
#[derive(Debug, Clone)]
pub struct OperatorSample {
    pub sensors: SensorSet,
    /// N_q x d_y.
    pub queries: Array2<f64>,
    /// N_q x d_out.
    pub targets: Array2<f64>,
    /// Small per-sample latent parameters (coefficients, strengths, bump or
    /// mixture parameters); fixed length within a dataset.
    pub extra: Option<Array1<f64>>,
    /// Large per-sample auxiliary array (e.g. a stored velocity grid).
    pub aux: Option<Array1<f64>>,
}

impl OperatorSample {
    pub fn validate(&self, card: &BenchmarkCard) -> Result<()> {
        if self.sensors.len() != card.m {
            return Err(SetONetError::validation(format!(
                "sample has {} sensors, card says {}",
                self.sensors.len(),
                card.m
            )));
        }
        if self.sensors.coordinate_dim() != card.d_x || self.sensors.value_dim() != card.d_u {
            return Err(SetONetError::validation("sample sensor dims do not match card"));
        }
        if self.queries.nrows() != card.n_q
            || self.queries.ncols() != card.d_y
            || self.targets.nrows() != card.n_q
            || self.targets.ncols() != card.d_out
        {
            return Err(SetONetError::validation("sample query/target shape does not match card"));
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(SetONetError::numerical("sample targets contain nonfinite values"));
        }
        if !domain_contains(&card.sensor_domain, &self.sensors.locations) {
            return Err(SetONetError::validation("sensor locations leave the benchmark domain"));
        }
        if !domain_contains(&card.query_domain, &self.queries) {
            return Err(SetONetError::validation("query locations leave the benchmark domain"));
        }
        Ok(())
    }
}

const DOMAIN_SLACK: f64 = 1e-9;

fn domain_contains(domain: &SensorDomain, points: &Array2<f64>) -> bool {
    let inside1 = |x: f64, a: f64, b: f64| x >= a - DOMAIN_SLACK && x <= b + DOMAIN_SLACK;
    match *domain {
        SensorDomain::Interval { a, b } | SensorDomain::Grid1 { a, b, .. } => {
            points.column(0).iter().all(|&x| inside1(x, a, b))
        }
        SensorDomain::Box2 { x0, x1, y0, y1 } => points
            .rows()
            .into_iter()
            .all(|r| inside1(r[0], x0, x1) && inside1(r[1], y0, y1)),
    }
}

/// Sensor locations of a stored split; shared layouts are stored once.
#[derive(Debug, Clone, PartialEq)]
pub enum Locations {
    /// M x d_x, common to every sample.
    Shared(Array2<f64>),
    /// N x M x d_x.
    PerSample(Array3<f64>),
}

/// Query locations of a stored split.
#[derive(Debug, Clone, PartialEq)]
pub enum Queries {
    /// N_q x d_y, common to every sample.
    Shared(Array2<f64>),
    /// N x N_q x d_y.
    PerSample(Array3<f64>),
}

/// One materialized dataset split.
#[derive(Debug, Clone)]
pub struct OperatorDataset {
    pub card: BenchmarkCard,
    pub locations: Locations,
    /// N x M x d_u.
    pub values: Array3<f64>,
    pub queries: Queries,
    /// N x N_q x d_out.
    pub targets: Array3<f64>,
    /// N x K small per-sample parameters.
    pub extra: Option<Array2<f64>>,
    /// N x F large per-sample auxiliary arrays.
    pub aux: Option<Array2<f64>>,
    /// Seeds, split name, normalization stats, solver settings.
    pub meta: serde_json::Value,
}

impl OperatorDataset {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locations_of(&self, i: usize) -> Array2<f64> {
        match &self.locations {
            Locations::Shared(l) => l.clone(),
            Locations::PerSample(l) => l.index_axis(Axis(0), i).to_owned(),
        }
    }

    pub fn queries_of(&self, i: usize) -> Array2<f64> {
        match &self.queries {
            Queries::Shared(q) => q.clone(),
            Queries::PerSample(q) => q.index_axis(Axis(0), i).to_owned(),
        }
    }

    pub fn targets_of(&self, i: usize) -> Array2<f64> {
        self.targets.index_axis(Axis(0), i).to_owned()
    }

    /// Sensor set of sample `i` with the family weight convention.
    pub fn sensor_set(&self, i: usize) -> Result<SensorSet> {
        let values = self.values.index_axis(Axis(0), i).to_owned();
        self.card.sensor_set(self.locations_of(i), values)
    }

    /// Shape coherence of all stored arrays against the card.
    pub fn validate(&self) -> Result<()> {
        self.card.validate()?;
        let n = self.len();
        let (m, d_x) = match &self.locations {
            Locations::Shared(l) => (l.nrows(), l.ncols()),
            Locations::PerSample(l) => {
                if l.shape()[0] != n {
                    return Err(SetONetError::validation("locations sample count mismatch"));
                }
                (l.shape()[1], l.shape()[2])
            }
        };
        if m != self.card.m || d_x != self.card.d_x {
            return Err(SetONetError::validation("stored locations do not match card"));
        }
        if self.values.shape() != [n, self.card.m, self.card.d_u] {
            return Err(SetONetError::validation("stored values do not match card"));
        }
        let (n_q, d_y) = match &self.queries {
            Queries::Shared(q) => (q.nrows(), q.ncols()),
            Queries::PerSample(q) => {
                if q.shape()[0] != n {
                    return Err(SetONetError::validation("queries sample count mismatch"));
                }
                (q.shape()[1], q.shape()[2])
            }
        };
        if n_q != self.card.n_q || d_y != self.card.d_y {
            return Err(SetONetError::validation("stored queries do not match card"));
        }
        if self.targets.shape() != [n, self.card.n_q, self.card.d_out] {
            return Err(SetONetError::validation("stored targets do not match card"));
        }
        if let Some(e) = &self.extra {
            if e.nrows() != n {
                return Err(SetONetError::validation("extra rows do not match sample count"));
            }
        }
        if let Some(a) = &self.aux {
            if a.nrows() != n {
                return Err(SetONetError::validation("aux rows do not match sample count"));
            }
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err(SetONetError::numerical("stored targets contain nonfinite values"));
        }
        Ok(())
    }

    /// Assembles per-sample rows into a dataset. All samples must agree on
    /// shapes; shared layouts are detected by the caller, not here.
    pub fn from_samples(
        card: BenchmarkCard,
        samples: &[OperatorSample],
        shared_locations: Option<Array2<f64>>,
        shared_queries: Option<Array2<f64>>,
        meta: serde_json::Value,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(SetONetError::validation("dataset needs at least one sample"));
        }
        for s in samples {
            s.validate(&card)?;
        }
        let n = samples.len();
        let mut values = Array3::zeros((n, card.m, card.d_u));
        let mut targets = Array3::zeros((n, card.n_q, card.d_out));
        for (i, s) in samples.iter().enumerate() {
            values.index_axis_mut(Axis(0), i).assign(&s.sensors.values);
            targets.index_axis_mut(Axis(0), i).assign(&s.targets);
        }
        let locations = match shared_locations {
            Some(l) => Locations::Shared(l),
            None => {
                let mut all = Array3::zeros((n, card.m, card.d_x));
                for (i, s) in samples.iter().enumerate() {
                    all.index_axis_mut(Axis(0), i).assign(&s.sensors.locations);
                }
                Locations::PerSample(all)
            }
        };
        let queries = match shared_queries {
            Some(q) => Queries::Shared(q),
            None => {
                let mut all = Array3::zeros((n, card.n_q, card.d_y));
                for (i, s) in samples.iter().enumerate() {
                    all.index_axis_mut(Axis(0), i).assign(&s.queries);
                }
                Queries::PerSample(all)
            }
        };
        let extra = match &samples[0].extra {
            Some(e0) => {
                let k = e0.len();
                let mut all = Array2::zeros((n, k));
                for (i, s) in samples.iter().enumerate() {
                    let e = s.extra.as_ref().ok_or_else(|| {
                        SetONetError::validation("inconsistent per-sample extra arrays")
                    })?;
                    if e.len() != k {
                        return Err(SetONetError::validation("ragged per-sample extra arrays"));
                    }
                    all.row_mut(i).assign(e);
                }
                Some(all)
            }
            None => None,
        };
        let aux = match &samples[0].aux {
            Some(a0) => {
                let k = a0.len();
                let mut all = Array2::zeros((n, k));
                for (i, s) in samples.iter().enumerate() {
                    let a = s
                        .aux
                        .as_ref()
                        .ok_or_else(|| SetONetError::validation("inconsistent aux arrays"))?;
                    if a.len() != k {
                        return Err(SetONetError::validation("ragged aux arrays"));
                    }
                    all.row_mut(i).assign(a);
                }
                Some(all)
            }
            None => None,
        };
        let ds = OperatorDataset { card, locations, values, queries, targets, extra, aux, meta };
        ds.validate()?;
        Ok(ds)
    }
}
