//! Branch encoders: permutation-invariant maps from a sensor set to the
//! coefficient vectors consumed by the synthesis rule.
//!
//! Variants: a key-variant with learnable query tokens and a position-only
//! key pathway; pooled variants (attention / mean / sum) over a shared
//! position-value feature map; a fixed-grid baseline consuming the flat
//! value vector; and a multi-head additive-encoder baseline.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SetONetError};
use crate::nn::Activation;
use crate::pe::PositionalEncodingConfig;
use crate::sensors::SensorSet;

mod deeponet;
mod key;
mod pooled;
mod vidon;

pub use deeponet::DeepONetBranch;
pub use key::KeyBranch;
pub use pooled::{MultiheadAttention, PooledBranch};
pub use vidon::VidonBranch;

/// Coefficients for one sample: p vectors b_k plus the bias b_0.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchCoefficients {
    /// p x d_out.
    pub coeffs: Array2<f64>,
    /// d_out; either a learnable constant offset or (for the multi-head
    /// baseline) the coefficient of the trunk's extra basis column.
    pub bias: Array1<f64>,
}

/// Batched coefficients: B x p x d_out plus B x d_out biases.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchCoefficients {
    pub coeffs: Array3<f64>,
    pub bias: Array2<f64>,
}

impl BatchCoefficients {
    pub fn sample(&self, b: usize) -> BranchCoefficients {
        BranchCoefficients {
            coeffs: self.coeffs.index_axis(ndarray::Axis(0), b).to_owned(),
            bias: self.bias.row(b).to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchVariant {
    Key,
    Attention,
    Mean,
    Sum,
    Deeponet,
    Vidon,
}

impl BranchVariant {
    pub fn is_set_based(self) -> bool {
        !matches!(self, BranchVariant::Deeponet)
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "key" | "setonet-key" => BranchVariant::Key,
            "attention" | "setonet-attention" => BranchVariant::Attention,
            "mean" | "setonet-mean" => BranchVariant::Mean,
            "sum" | "setonet-sum" => BranchVariant::Sum,
            "deeponet" => BranchVariant::Deeponet,
            "vidon" => BranchVariant::Vidon,
            other => {
                return Err(SetONetError::validation(format!(
                    "unknown branch variant '{other}' (expected key, attention, mean, sum, deeponet, or vidon)"
                )))
            }
        })
    }
}

/// Dimensions of the multi-head additive-encoder baseline branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VidonDims {
    /// Per-sensor encoding width (coordinate and value encoders both emit this).
    pub d_enc: usize,
    /// Hidden width inside each encoder MLP.
    pub enc_hidden: usize,
    pub heads: usize,
    /// Hidden width inside each head's score and value MLPs.
    pub head_hidden: usize,
    /// Per-head output width; heads concatenate to heads * head_out.
    pub head_out: usize,
    /// Two hidden widths of the output MLP.
    pub out_hidden: (usize, usize),
}

impl Default for VidonDims {
    fn default() -> Self {
        Self { d_enc: 40, enc_hidden: 256, heads: 4, head_hidden: 576, head_out: 64, out_hidden: (215, 296) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub variant: BranchVariant,
    pub d_x: usize,
    pub d_u: usize,
    pub p: usize,
    pub d_out: usize,
    pub pe: PositionalEncodingConfig,
    pub d_k: usize,
    pub d_v: usize,
    /// Number of learnable query tokens (key variant); 1 for attention pooling.
    pub n_pool: usize,
    /// Attention-pooling heads.
    pub heads: usize,
    /// Row-wise score transform of the key variant.
    pub mix: Activation,
    pub key_net_hidden: Vec<usize>,
    pub value_net_hidden: Vec<usize>,
    /// Readout hidden widths for the pooled variants.
    pub rho_hidden: Vec<usize>,
    /// Row-wise token readout hidden widths for the key variant.
    pub rho_tok_hidden: Vec<usize>,
    /// Feed raw sensor coordinates into the value map alongside the values.
    pub augment_values_with_coords: bool,
    /// Fixed sensor count of the flat-vector baseline.
    pub fixed_m: usize,
    pub deeponet_hidden: Vec<usize>,
    pub vidon: VidonDims,
}

impl BranchConfig {
    /// Baseline configuration with the common defaults; callers override
    /// widths per benchmark family.
    pub fn new(variant: BranchVariant, d_x: usize, d_u: usize, p: usize, d_out: usize, pe_max: f64) -> Self {
        Self {
            variant,
            d_x,
            d_u,
            p,
            d_out,
            pe: PositionalEncodingConfig { embed_dim: 64, max_scale: pe_max, coordinate_dim: d_x },
            d_k: 64,
            d_v: 32,
            n_pool: p,
            heads: 4,
            mix: Activation::Softplus,
            key_net_hidden: vec![256],
            value_net_hidden: vec![256],
            rho_hidden: vec![256],
            rho_tok_hidden: vec![256],
            augment_values_with_coords: false,
            fixed_m: 0,
            deeponet_hidden: vec![128, 128, 128],
            vidon: VidonDims::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.d_out == 0 || self.d_x == 0 || self.d_u == 0 {
            return Err(SetONetError::validation("branch dimensions must be positive"));
        }
        self.pe.validate()?;
        if self.pe.coordinate_dim != self.d_x {
            return Err(SetONetError::validation("positional encoding coordinate_dim must equal d_x"));
        }
        match self.variant {
            BranchVariant::Key => {
                if self.d_k == 0 || self.d_v == 0 || self.n_pool == 0 {
                    return Err(SetONetError::validation("key variant needs positive d_k, d_v, n_pool"));
                }
                if !matches!(self.mix, Activation::Softplus | Activation::Tanh) {
                    return Err(SetONetError::validation("mixing function must be softplus or tanh"));
                }
            }
            BranchVariant::Attention => {
                if self.n_pool != 1 {
                    return Err(SetONetError::validation("attention pooling uses exactly one pooling token"));
                }
                if self.heads == 0 || self.d_v % self.heads != 0 {
                    return Err(SetONetError::validation(format!(
                        "d_v = {} must split evenly across {} attention heads",
                        self.d_v, self.heads
                    )));
                }
            }
            BranchVariant::Mean | BranchVariant::Sum => {}
            BranchVariant::Deeponet => {
                if self.fixed_m == 0 {
                    return Err(SetONetError::validation("flat-vector baseline needs the fixed sensor count"));
                }
            }
            BranchVariant::Vidon => {
                let v = &self.vidon;
                if v.heads == 0 || v.d_enc == 0 || v.head_out == 0 {
                    return Err(SetONetError::validation("multi-head baseline dimensions must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Locations for one batch: either one layout shared by all samples or a
/// per-sample layout (e.g. after drop-off replacement).
#[derive(Debug, Clone, PartialEq)]
pub enum BatchLocations {
    Shared(Array2<f64>),
    PerSample(Array3<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchWeights {
    Shared(Array1<f64>),
    PerSample(Array2<f64>),
}

/// A batch of sensor sets with a common cardinality M.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBatch {
    pub locations: BatchLocations,
    /// B x M x d_u.
    pub values: Array3<f64>,
    pub weights: BatchWeights,
}

impl SensorBatch {
    pub fn shared(locations: Array2<f64>, values: Array3<f64>, weights: Array1<f64>) -> Result<Self> {
        let (m, _) = locations.dim();
        if values.dim().1 != m || weights.len() != m {
            return Err(SetONetError::validation("sensor batch shape mismatch"));
        }
        Ok(Self { locations: BatchLocations::Shared(locations), values, weights: BatchWeights::Shared(weights) })
    }

    pub fn from_sets(sets: &[SensorSet]) -> Result<Self> {
        let b = sets.len();
        if b == 0 {
            return Err(SetONetError::validation("empty batch"));
        }
        let m = sets[0].len();
        let d_x = sets[0].coordinate_dim();
        let d_u = sets[0].value_dim();
        let mut locations = Array3::zeros((b, m, d_x));
        let mut values = Array3::zeros((b, m, d_u));
        let mut weights = Array2::zeros((b, m));
        for (i, s) in sets.iter().enumerate() {
            if s.len() != m || s.coordinate_dim() != d_x || s.value_dim() != d_u {
                return Err(SetONetError::validation("batch mixes sensor set shapes"));
            }
            locations.index_axis_mut(ndarray::Axis(0), i).assign(&s.locations);
            values.index_axis_mut(ndarray::Axis(0), i).assign(&s.values);
            weights.row_mut(i).assign(&s.weights);
        }
        Ok(Self {
            locations: BatchLocations::PerSample(locations),
            values,
            weights: BatchWeights::PerSample(weights),
        })
    }

    pub fn single(s: &SensorSet) -> Self {
        Self::from_sets(std::slice::from_ref(s)).expect("single sensor set is a valid batch")
    }

    pub fn batch_size(&self) -> usize {
        self.values.dim().0
    }

    pub fn m(&self) -> usize {
        self.values.dim().1
    }

    /// Locations of sample `b` (the shared layout if there is one).
    pub fn locations_of(&self, b: usize) -> ArrayView2<'_, f64> {
        match &self.locations {
            BatchLocations::Shared(l) => l.view(),
            BatchLocations::PerSample(l) => l.index_axis(ndarray::Axis(0), b),
        }
    }

    pub fn weights_of(&self, b: usize) -> ArrayView1<'_, f64> {
        match &self.weights {
            BatchWeights::Shared(w) => w.view(),
            BatchWeights::PerSample(w) => w.row(b),
        }
    }

    pub fn validate_finite(&self) -> Result<()> {
        let loc_ok = match &self.locations {
            BatchLocations::Shared(l) => l.iter().all(|v| v.is_finite()),
            BatchLocations::PerSample(l) => l.iter().all(|v| v.is_finite()),
        };
        if !loc_ok || self.values.iter().any(|v| !v.is_finite()) {
            return Err(SetONetError::validation("sensor batch contains nonfinite entries"));
        }
        Ok(())
    }
}

/// Row-wise mixing rule applied to the token-sensor score matrix.
pub enum Mixing<'a> {
    /// Softmax across sensors per token row.
    RowSoftmax,
    /// Non-normalized transform with sensor weights:
    /// A[k, i] = w_i * mix(S[k, i]) / sum_j w_j.
    Weighted { mix: Activation, weights: ArrayView1<'a, f64> },
}

/// Materializes the mixing matrix A(S).
pub fn mixing_matrix(s: ArrayView2<'_, f64>, mixing: &Mixing<'_>) -> Array2<f64> {
    match mixing {
        Mixing::RowSoftmax => {
            let mut a = s.to_owned();
            for mut row in a.rows_mut() {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            a
        }
        Mixing::Weighted { mix, weights } => {
            let wsum: f64 = weights.sum();
            let mut a = s.to_owned();
            for mut row in a.rows_mut() {
                for (v, &w) in row.iter_mut().zip(weights.iter()) {
                    *v = w * mix.apply(*v) / wsum;
                }
            }
            a
        }
    }
}

/// Token-sensor aggregation: A(Q K^T / sqrt(d_k)) V.
///
/// Permuting sensor rows of (K, V) together (and the weights, if any) leaves
/// the output unchanged up to floating-point reassociation.
pub fn tsa(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    mixing: &Mixing<'_>,
) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() {
        return Err(SetONetError::validation(format!(
            "d_k mismatch: query tokens have {}, keys have {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(SetONetError::validation("keys and values must agree on the sensor count"));
    }
    if let Mixing::Weighted { weights, .. } = mixing {
        if weights.len() != k.nrows() {
            return Err(SetONetError::validation("weight vector length must equal the sensor count"));
        }
    }
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let s = q.dot(&k.t()) * scale;
    Ok(mixing_matrix(s.view(), mixing).dot(&v))
}

/// A branch encoder with hand-rolled reverse passes.
///
/// `forward_batch` caches activations; `backward_batch` consumes the cache and
/// accumulates parameter gradients.
pub enum Branch {
    Key(KeyBranch),
    Pooled(PooledBranch),
    Deeponet(DeepONetBranch),
    Vidon(VidonBranch),
}

impl Branch {
    pub fn new(cfg: &BranchConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.variant {
            BranchVariant::Key => Branch::Key(KeyBranch::new(cfg, rng)?),
            BranchVariant::Attention | BranchVariant::Mean | BranchVariant::Sum => {
                Branch::Pooled(PooledBranch::new(cfg, rng)?)
            }
            BranchVariant::Deeponet => Branch::Deeponet(DeepONetBranch::new(cfg, rng)?),
            BranchVariant::Vidon => Branch::Vidon(VidonBranch::new(cfg, rng)?),
        })
    }

    pub fn forward_batch(&mut self, batch: &SensorBatch) -> Result<BatchCoefficients> {
        batch.validate_finite()?;
        match self {
            Branch::Key(b) => b.forward_batch(batch),
            Branch::Pooled(b) => b.forward_batch(batch),
            Branch::Deeponet(b) => b.forward_batch(batch),
            Branch::Vidon(b) => b.forward_batch(batch),
        }
    }

    /// Gradients w.r.t. the forward output; call immediately after forward_batch.
    pub fn backward_batch(&mut self, d_coeffs: &Array3<f64>, d_bias: &Array2<f64>) -> Result<()> {
        match self {
            Branch::Key(b) => b.backward_batch(d_coeffs, d_bias),
            Branch::Pooled(b) => b.backward_batch(d_coeffs, d_bias),
            Branch::Deeponet(b) => b.backward_batch(d_coeffs, d_bias),
            Branch::Vidon(b) => b.backward_batch(d_coeffs, d_bias),
        }
    }

    pub fn forward(&mut self, s: &SensorSet) -> Result<BranchCoefficients> {
        let out = self.forward_batch(&SensorBatch::single(s))?;
        Ok(out.sample(0))
    }

    pub fn config(&self) -> &BranchConfig {
        match self {
            Branch::Key(b) => b.config(),
            Branch::Pooled(b) => b.config(),
            Branch::Deeponet(b) => b.config(),
            Branch::Vidon(b) => b.config(),
        }
    }
}

impl crate::nn::Params for Branch {
    fn visit_params(&mut self, f: &mut dyn FnMut(crate::nn::ParamRef<'_>)) {
        match self {
            Branch::Key(b) => b.visit_params(f),
            Branch::Pooled(b) => b.visit_params(f),
            Branch::Deeponet(b) => b.visit_params(f),
            Branch::Vidon(b) => b.visit_params(f),
        }
    }
}
