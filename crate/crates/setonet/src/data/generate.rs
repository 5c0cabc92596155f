//! Split materialization for every synthetic benchmark.
//!
//! Sample `i` of a split is a pure function of (master seed, split, i):
//! each sample owns an independent RNG stream, so datasets are bitwise
//! reproducible and generation order is irrelevant. The test split draws
//! from a salted seed so it never collides with the on-the-fly training
//! stream of the same master seed, while shared sensor layouts (which must
//! match between training and evaluation) always derive from the unsalted
//! seed.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::{
    adaptive_query_sample, advdiff_field, diffraction_sample, heat_field, ot_sample, sample_rng,
    solve_darcy_1d, BenchmarkCard, GenParams, GrfSampler, OperatorDataset, OperatorSample,
    PolyCoeffs, PolyStream, GENERATOR_VERSION,
};
use crate::config::BenchmarkId;
use crate::error::{Result, SetONetError};
use crate::sensors::{resample_variable_layout, sample_fixed_layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSplit {
    Train,
    Test,
}

/// Keeps materialized test samples off the training stream space.
const TEST_SALT: u64 = 0x7e57_da7a_5a17_ed00;

impl DatasetSplit {
    pub fn name(self) -> &'static str {
        match self {
            DatasetSplit::Train => "train",
            DatasetSplit::Test => "test",
        }
    }

    fn effective_seed(self, master_seed: u64) -> u64 {
        match self {
            DatasetSplit::Train => master_seed,
            DatasetSplit::Test => master_seed ^ TEST_SALT,
        }
    }
}

/// Materializes `n_samples` samples of one split.
pub fn generate_dataset(
    card: &BenchmarkCard,
    split: DatasetSplit,
    n_samples: usize,
    master_seed: u64,
) -> Result<OperatorDataset> {
    card.validate()?;
    if n_samples == 0 {
        return Err(SetONetError::validation("cannot generate an empty dataset"));
    }
    let meta = serde_json::json!({
        "benchmark": card.bench.name(),
        "split": split.name(),
        "master_seed": master_seed,
        "generator_version": GENERATOR_VERSION,
    });
    use BenchmarkId::*;
    match card.bench {
        Derivative | Integral => poly_dataset(card, split, n_samples, master_seed, meta),
        Darcy => darcy_dataset(card, split, n_samples, master_seed, meta),
        Heat | AdvectionDiffusion => sources_dataset(card, split, n_samples, master_seed, meta),
        Diffraction => diffraction_dataset(card, split, n_samples, master_seed, meta),
        OptimalTransport => ot_dataset(card, split, n_samples, master_seed, meta),
        Elastic => Err(SetONetError::validation(
            "plate data is generated externally; load it with load_elastic_dataset",
        )),
    }
}

fn poly_dataset(
    card: &BenchmarkCard,
    split: DatasetSplit,
    n: usize,
    master_seed: u64,
    meta: serde_json::Value,
) -> Result<OperatorDataset> {
    // The stream is seeded with the unsalted master so the shared sensor
    // layout matches the training stream exactly.
    let stream = PolyStream::with_card(card.clone(), master_seed)?;
    let coeff_bound = match card.gen {
        GenParams::Poly { coeff_bound } => coeff_bound,
        _ => return Err(SetONetError::validation("card generator params are not polynomial")),
    };
    let eff = split.effective_seed(master_seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let s = match split {
            DatasetSplit::Train => stream.sample_at(i as u64)?,
            DatasetSplit::Test => {
                let mut rng = sample_rng(eff, i as u64);
                stream.sample_for_coeffs(&PolyCoeffs::sample(coeff_bound, &mut rng))?
            }
        };
        samples.push(s);
    }
    OperatorDataset::from_samples(
        card.clone(),
        &samples,
        Some(stream.locations().clone()),
        Some(stream.queries().clone()),
        meta,
    )
}

/// Linearly spaced index subset of an n-point grid, endpoints included.
pub(crate) fn grid_indices(n: usize, m: usize) -> Vec<usize> {
    (0..m)
        .map(|j| {
            if m == 1 {
                0
            } else {
                ((j as f64) * ((n - 1) as f64) / ((m - 1) as f64)).round() as usize
            }
        })
        .collect()
}

fn darcy_dataset(
    card: &BenchmarkCard,
    split: DatasetSplit,
    n: usize,
    master_seed: u64,
    meta: serde_json::Value,
) -> Result<OperatorDataset> {
    let GenParams::Darcy { grid_n, ell, sigma2 } = card.gen else {
        return Err(SetONetError::validation("card generator params are not a GRF solve"));
    };
    let sampler = GrfSampler::new(grid_n, ell, sigma2)?;
    // Grid layouts are deterministic; the seed argument is inert.
    let locations = sample_fixed_layout(card.sensor_domain, card.m, 0)?;
    let queries = sample_fixed_layout(card.query_domain, card.n_q, 0)?;
    let sensor_idx = grid_indices(grid_n, card.m);
    let query_idx = grid_indices(grid_n, card.n_q);
    let eff = split.effective_seed(master_seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(eff, i as u64);
        let f = sampler.sample(&mut rng).values;
        let u = solve_darcy_1d(f.view())?;
        let mut values = Array2::zeros((card.m, 1));
        for (j, &idx) in sensor_idx.iter().enumerate() {
            values[[j, 0]] = f[idx];
        }
        let mut targets = Array2::zeros((card.n_q, 1));
        for (k, &idx) in query_idx.iter().enumerate() {
            targets[[k, 0]] = u[idx];
        }
        let sensors = card.sensor_set(locations.clone(), values)?;
        samples.push(OperatorSample {
            sensors,
            queries: queries.clone(),
            targets,
            extra: None,
            // Full forcing grid; lets downstream checks re-verify the solve.
            aux: Some(f),
        });
    }
    OperatorDataset::from_samples(card.clone(), &samples, Some(locations), Some(queries), meta)
}

fn sources_dataset(
    card: &BenchmarkCard,
    split: DatasetSplit,
    n: usize,
    master_seed: u64,
    meta: serde_json::Value,
) -> Result<OperatorDataset> {
    enum Field {
        Heat { eps: f64 },
        AdvDiff { d: f64, v: [f64; 2], clamp_radius: f64 },
    }
    let (field, lo, hi, beta) = match card.gen {
        GenParams::Heat { eps, strength_lo, strength_hi, beta } => {
            (Field::Heat { eps }, strength_lo, strength_hi, beta)
        }
        GenParams::AdvDiff { d, v, clamp_radius, strength_lo, strength_hi, beta } => {
            (Field::AdvDiff { d, v, clamp_radius }, strength_lo, strength_hi, beta)
        }
        _ => return Err(SetONetError::validation("card generator params are not point sources")),
    };
    if !(lo > 0.0) || hi < lo {
        return Err(SetONetError::validation("strength range must be positive and ordered"));
    }
    let eff = split.effective_seed(master_seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = sample_rng(eff, i as u64);
        let locations = resample_variable_layout(card.sensor_domain, card.m, &mut rng)?;
        let mut strengths = Array1::zeros(card.m);
        for s in strengths.iter_mut() {
            // Log-uniform on [lo, hi].
            *s = rng.random_range(lo.ln()..=hi.ln()).exp();
        }
        let eval = |queries: &Array2<f64>| -> Result<Array1<f64>> {
            match field {
                Field::Heat { eps } => {
                    heat_field(locations.view(), strengths.view(), queries.view(), eps)
                }
                Field::AdvDiff { d, v, clamp_radius } => advdiff_field(
                    locations.view(),
                    strengths.view(),
                    queries.view(),
                    d,
                    v,
                    clamp_radius,
                ),
            }
        };
        let point = |x: f64, y: f64| -> f64 {
            let q = Array2::from_shape_vec((1, 2), vec![x, y]).expect("static shape");
            match eval(&q) {
                Ok(u) => u[0],
                Err(_) => f64::NAN,
            }
        };
        let queries = adaptive_query_sample(&point, card.n_q, beta, &mut rng)?;
        let u = eval(&queries)?;
        let targets = u.insert_axis(ndarray::Axis(1));
        let values = strengths.clone().insert_axis(ndarray::Axis(1));
        let sensors = card.sensor_set(locations, values)?;
        samples.push(OperatorSample {
            sensors,
            queries,
            targets,
            extra: Some(strengths),
            aux: None,
        });
    }
    OperatorDataset::from_samples(card.clone(), &samples, None, None, meta)
}

fn diffraction_dataset(
    card: &BenchmarkCard,
    split: DatasetSplit,
    n: usize,
    master_seed: u64,
    meta: serde_json::Value,
) -> Result<OperatorDataset> {
    let eff = split.effective_seed(master_seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        samples.push(diffraction_sample(card, &mut sample_rng(eff, i as u64))?);
    }
    let shared_queries = samples[0].queries.clone();
    OperatorDataset::from_samples(card.clone(), &samples, None, Some(shared_queries), meta)
}

fn ot_dataset(
    card: &BenchmarkCard,
    split: DatasetSplit,
    n: usize,
    master_seed: u64,
    meta: serde_json::Value,
) -> Result<OperatorDataset> {
    let eff = split.effective_seed(master_seed);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        samples.push(ot_sample(card, &mut sample_rng(eff, i as u64))?);
    }
    OperatorDataset::from_samples(card.clone(), &samples, None, None, meta)
}
