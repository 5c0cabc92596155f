//! The assembled operator: a branch encoder producing coefficients and a
//! trunk producing basis evaluations, combined by the synthesis rule.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::branch::{BatchCoefficients, Branch, BranchConfig, BranchVariant, SensorBatch};
use crate::error::{Result, SetONetError};
use crate::nn::{MlpCache, ParamRef, Params};
use crate::trunk::{synthesize, synthesize_backward, Trunk, TrunkBasis, TrunkConfig};

/// Query coordinates for one forward pass. Shared queries evaluate the trunk
/// once for the whole batch; per-sample queries carry one block per sample.
#[derive(Debug, Clone)]
pub enum QueryLocs {
    /// N_q x d_y, the same grid for every sample.
    Shared(Array2<f64>),
    /// B x N_q x d_y.
    PerSample(Array3<f64>),
}

impl QueryLocs {
    pub fn n_queries(&self) -> usize {
        match self {
            QueryLocs::Shared(q) => q.nrows(),
            QueryLocs::PerSample(q) => q.dim().1,
        }
    }

    pub fn coordinate_dim(&self) -> usize {
        match self {
            QueryLocs::Shared(q) => q.ncols(),
            QueryLocs::PerSample(q) => q.dim().2,
        }
    }

    /// Query rows for one sample.
    pub fn of_sample(&self, b: usize) -> ArrayView2<'_, f64> {
        match self {
            QueryLocs::Shared(q) => q.view(),
            QueryLocs::PerSample(q) => q.index_axis(Axis(0), b),
        }
    }
}

pub struct SetONetModel {
    pub branch: Branch,
    pub trunk: Trunk,
}

/// Everything the backward pass needs from one forward pass.
pub struct ModelForward {
    /// B x N_q x d_out predictions.
    pub pred: Array3<f64>,
    coeffs: BatchCoefficients,
    basis: TrunkBasis,
    trunk_cache: MlpCache,
    /// Set when the basis rows are stacked per sample rather than shared.
    per_sample_n_q: Option<usize>,
}

impl SetONetModel {
    pub fn new(branch: Branch, trunk: Trunk) -> Result<Self> {
        let bc = branch.config();
        let tc = &trunk.cfg;
        if bc.p != tc.p || bc.d_out != tc.d_out {
            return Err(SetONetError::validation(format!(
                "branch emits {}x{} coefficient blocks but the trunk expects {}x{}",
                bc.p, bc.d_out, tc.p, tc.d_out
            )));
        }
        let wants_column = bc.variant == BranchVariant::Vidon;
        if tc.extra_bias_column != wants_column {
            return Err(SetONetError::validation(
                "the trunk constant-multiplier column is used exactly when the branch \
                 emits its constant from the readout head",
            ));
        }
        Ok(SetONetModel { branch, trunk })
    }

    pub fn from_configs(
        branch_cfg: &BranchConfig,
        trunk_cfg: TrunkConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let branch = Branch::new(branch_cfg, rng)?;
        let trunk = Trunk::new(trunk_cfg, rng)?;
        SetONetModel::new(branch, trunk)
    }

    pub fn forward_batch(
        &mut self,
        sensors: &SensorBatch,
        queries: &QueryLocs,
    ) -> Result<ModelForward> {
        let b = sensors.batch_size();
        let coeffs = self.branch.forward_batch(sensors)?;

        match queries {
            QueryLocs::Shared(q) => {
                let (basis, trunk_cache) = self.trunk.forward_cached(q.view())?;
                let pred = synthesize(&coeffs, &basis)?;
                Ok(ModelForward { pred, coeffs, basis, trunk_cache, per_sample_n_q: None })
            }
            QueryLocs::PerSample(q) => {
                let (qb, n_q, d_y) = q.dim();
                if qb != b {
                    return Err(SetONetError::validation(format!(
                        "query batch {qb} does not match sensor batch {b}"
                    )));
                }
                let flat = q.to_shape((b * n_q, d_y)).expect("contiguous");
                let (basis, trunk_cache) = self.trunk.forward_cached(flat.view())?;
                let pred = synthesize_stacked(&coeffs, &basis, n_q)?;
                Ok(ModelForward { pred, coeffs, basis, trunk_cache, per_sample_n_q: Some(n_q) })
            }
        }
    }

    /// Accumulates parameter gradients for d(loss)/d(pred).
    pub fn backward(&mut self, fwd: &ModelForward, d_pred: &Array3<f64>) -> Result<()> {
        if d_pred.dim() != fwd.pred.dim() {
            return Err(SetONetError::validation(
                "prediction gradient shape does not match the forward output",
            ));
        }
        let (d_coeffs, d_bias, d_basis, d_tau0) = match fwd.per_sample_n_q {
            None => synthesize_backward(&fwd.coeffs, &fwd.basis, d_pred),
            Some(n_q) => synthesize_stacked_backward(&fwd.coeffs, &fwd.basis, d_pred, n_q),
        };
        self.trunk
            .backward(&fwd.trunk_cache, &d_basis, d_tau0.as_ref())?;
        self.branch.backward_batch(&d_coeffs, &d_bias)
    }

    pub fn predict(&mut self, sensors: &SensorBatch, queries: &QueryLocs) -> Result<Array3<f64>> {
        Ok(self.forward_batch(sensors, queries)?.pred)
    }
}

impl Params for SetONetModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.branch.visit_params(f);
        self.trunk.visit_params(f);
    }
}

/// Synthesis against a basis whose rows are the per-sample query blocks
/// stacked along the row axis: rows b*n_q..(b+1)*n_q belong to sample b.
fn synthesize_stacked(
    coeffs: &BatchCoefficients,
    basis: &TrunkBasis,
    n_q: usize,
) -> Result<Array3<f64>> {
    let (b, p, d_out) = coeffs.coeffs.dim();
    if basis.basis.dim() != (b * n_q, p, d_out) {
        return Err(SetONetError::validation(
            "stacked basis rows do not match batch size times query count",
        ));
    }
    let mut pred = Array3::zeros((b, n_q, d_out));
    for bi in 0..b {
        let rows = bi * n_q..(bi + 1) * n_q;
        for j in 0..d_out {
            let t = basis.basis.slice(s![rows.clone(), .., j]); // n_q x p
            let c = coeffs.coeffs.slice(s![bi, .., j]); // p
            let mut out = t.dot(&c);
            match &basis.tau0 {
                Some(t0) => {
                    let scale = coeffs.bias[[bi, j]];
                    out.iter_mut()
                        .zip(t0.slice(s![rows.clone(), j]).iter())
                        .for_each(|(o, &tv)| *o += scale * tv);
                }
                None => out += coeffs.bias[[bi, j]],
            }
            pred.slice_mut(s![bi, .., j]).assign(&out);
        }
    }
    Ok(pred)
}

fn synthesize_stacked_backward(
    coeffs: &BatchCoefficients,
    basis: &TrunkBasis,
    d_pred: &Array3<f64>,
    n_q: usize,
) -> (Array3<f64>, Array2<f64>, Array3<f64>, Option<Array2<f64>>) {
    let (b, p, d_out) = coeffs.coeffs.dim();
    let mut d_coeffs = Array3::zeros((b, p, d_out));
    let mut d_bias = Array2::zeros((b, d_out));
    let mut d_basis = Array3::zeros((b * n_q, p, d_out));
    let mut d_tau0 = basis.tau0.as_ref().map(|_| Array2::zeros((b * n_q, d_out)));

    for bi in 0..b {
        let rows = bi * n_q..(bi + 1) * n_q;
        for j in 0..d_out {
            let g = d_pred.slice(s![bi, .., j]); // n_q
            let t = basis.basis.slice(s![rows.clone(), .., j]); // n_q x p
            let c = coeffs.coeffs.slice(s![bi, .., j]); // p

            d_coeffs.slice_mut(s![bi, .., j]).assign(&t.t().dot(&g));
            // outer product g x c
            let mut dt = d_basis.slice_mut(s![rows.clone(), .., j]);
            for (qi, &gv) in g.iter().enumerate() {
                dt.row_mut(qi)
                    .iter_mut()
                    .zip(c.iter())
                    .for_each(|(d, &cv)| *d = gv * cv);
            }

            match &basis.tau0 {
                Some(t0) => {
                    d_bias[[bi, j]] = g.dot(&t0.slice(s![rows.clone(), j]));
                    let dt0 = d_tau0.as_mut().expect("allocated above");
                    let scale = coeffs.bias[[bi, j]];
                    dt0.slice_mut(s![rows.clone(), j])
                        .iter_mut()
                        .zip(g.iter())
                        .for_each(|(d, &gv)| *d = scale * gv);
                }
                None => d_bias[[bi, j]] = g.sum(),
            }
        }
    }
    (d_coeffs, d_bias, d_basis, d_tau0)
}
