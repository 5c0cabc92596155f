//! Analytic cubic-plus-sine operator family on [-1, 1].
//!
//! One function f(x) = a x^3 + b x^2 + c x + e sin x serves two tasks:
//! differentiation maps f to f', and integration maps f' back to f (the
//! integration constant is zero because f(0) = 0 by construction).

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::{sample_rng, BenchmarkCard, OperatorSample};
use crate::config::BenchmarkId;
use crate::error::{Result, SetONetError};
use crate::sensors::{sample_fixed_layout, SensorDomain};

/// Coefficients of one family member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub e: f64,
}

impl PolyCoeffs {
    pub fn sample(bound: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || rng.random_range(-bound..=bound);
        PolyCoeffs { a: draw(), b: draw(), c: draw(), e: draw() }
    }

    pub fn f(&self, x: f64) -> f64 {
        self.a * x.powi(3) + self.b * x * x + self.c * x + self.e * x.sin()
    }

    pub fn f_prime(&self, x: f64) -> f64 {
        3.0 * self.a * x * x + 2.0 * self.b * x + self.c + self.e * x.cos()
    }

    pub fn to_array(self) -> Array1<f64> {
        Array1::from(vec![self.a, self.b, self.c, self.e])
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 4 {
            return Err(SetONetError::validation("poly coefficient vector must have length 4"));
        }
        Ok(PolyCoeffs { a: v[0], b: v[1], c: v[2], e: v[3] })
    }
}

fn check_task(task: BenchmarkId) -> Result<()> {
    match task {
        BenchmarkId::Derivative | BenchmarkId::Integral => Ok(()),
        other => Err(SetONetError::validation(format!(
            "{} is not an analytic 1D operator task",
            other.name()
        ))),
    }
}

/// Sensor values for one family member: f for the derivative task, f' for
/// the integration task. Locations are M x 1.
pub fn poly_inputs(
    task: BenchmarkId,
    coeffs: &PolyCoeffs,
    locations: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_task(task)?;
    let mut out = Array2::zeros((locations.nrows(), 1));
    for (i, x) in locations.column(0).iter().enumerate() {
        out[[i, 0]] = match task {
            BenchmarkId::Derivative => coeffs.f(*x),
            _ => coeffs.f_prime(*x),
        };
    }
    Ok(out)
}

/// Query targets: f' for the derivative task, f for the integration task.
pub fn poly_targets(
    task: BenchmarkId,
    coeffs: &PolyCoeffs,
    queries: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_task(task)?;
    let mut out = Array2::zeros((queries.nrows(), 1));
    for (i, y) in queries.column(0).iter().enumerate() {
        out[[i, 0]] = match task {
            BenchmarkId::Derivative => coeffs.f_prime(*y),
            _ => coeffs.f(*y),
        };
    }
    Ok(out)
}

/// Endless reproducible stream of samples for one task.
///
/// The sensor layout is one seeded sorted draw reused by every sample (the
/// fixed-layout setting); queries are `n_q` uniformly spaced points. Sample
/// `i` is a pure function of (seed, i).
#[derive(Debug)]
pub struct PolyStream {
    card: BenchmarkCard,
    locations: Array2<f64>,
    queries: Array2<f64>,
    master_seed: u64,
    next_index: u64,
}

/// Uniformly spaced query column on [a, b], endpoints included.
pub(crate) fn uniform_queries(a: f64, b: f64, n_q: usize) -> Array2<f64> {
    let mut q = Array2::zeros((n_q, 1));
    for i in 0..n_q {
        let t = if n_q == 1 { 0.5 } else { i as f64 / (n_q - 1) as f64 };
        q[[i, 0]] = a + t * (b - a);
    }
    q
}

pub fn gen_poly_family(seed: u64, task: BenchmarkId) -> Result<PolyStream> {
    PolyStream::with_card(BenchmarkCard::for_benchmark(task), seed)
}

/// Keeps the shared layout draw out of the per-sample stream space.
const LAYOUT_SALT: u64 = 0x9e3779b97f4a7c15;

impl PolyStream {
    /// Stream for an explicit card, allowing count overrides.
    pub fn with_card(card: BenchmarkCard, seed: u64) -> Result<Self> {
        check_task(card.bench)?;
        card.validate()?;
        let (a, b) = card.sensor_interval().expect("interval task");
        // Layout stream is distinct from every sample stream.
        let locations =
            sample_fixed_layout(SensorDomain::Interval { a, b }, card.m, seed ^ LAYOUT_SALT)?;
        let queries = uniform_queries(a, b, card.n_q);
        Ok(PolyStream { card, locations, queries, master_seed: seed, next_index: 0 })
    }

    pub fn card(&self) -> &BenchmarkCard {
        &self.card
    }

    pub fn locations(&self) -> &Array2<f64> {
        &self.locations
    }

    pub fn queries(&self) -> &Array2<f64> {
        &self.queries
    }

    /// Sample at an explicit stream index, independent of iteration order.
    pub fn sample_at(&self, index: u64) -> Result<OperatorSample> {
        let coeff_bound = match self.card.gen {
            super::GenParams::Poly { coeff_bound } => coeff_bound,
            _ => unreachable!("poly stream carries poly params"),
        };
        let mut rng = sample_rng(self.master_seed, index);
        let coeffs = PolyCoeffs::sample(coeff_bound, &mut rng);
        self.sample_for_coeffs(&coeffs)
    }

    /// Sample for known coefficients on the stream's shared layout.
    pub fn sample_for_coeffs(&self, coeffs: &PolyCoeffs) -> Result<OperatorSample> {
        let task = self.card.bench;
        let values = poly_inputs(task, coeffs, self.locations.view())?;
        let targets = poly_targets(task, coeffs, self.queries.view())?;
        let sensors = self.card.sensor_set(self.locations.clone(), values)?;
        Ok(OperatorSample {
            sensors,
            queries: self.queries.clone(),
            targets,
            extra: Some(coeffs.to_array()),
            aux: None,
        })
    }
}

impl Iterator for PolyStream {
    type Item = OperatorSample;

    fn next(&mut self) -> Option<OperatorSample> {
        let s = self.sample_at(self.next_index).expect("validated card");
        self.next_index += 1;
        Some(s)
    }
}
