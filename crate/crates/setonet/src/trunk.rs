//! Trunk network and the coefficient-basis synthesis rule.
//!
//! The trunk maps raw query coordinates (no positional encoding) to a basis
//! evaluation per query, optionally with one extra column that acts as a
//! learned multiplier for the branch's constant term.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::branch::BatchCoefficients;
use crate::error::{Result, SetONetError};
use crate::nn::{Activation, Mlp, MlpCache, ParamRef, Params};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrunkConfig {
    /// Query coordinate dimension.
    pub d_y: usize,
    /// Number of basis functions.
    pub p: usize,
    /// Output channels per query.
    pub d_out: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// When set, the trunk emits one extra basis row per query that scales
    /// the branch constant instead of a coefficient.
    pub extra_bias_column: bool,
}

impl TrunkConfig {
    pub fn new(d_y: usize, p: usize, d_out: usize) -> Self {
        TrunkConfig {
            d_y,
            p,
            d_out,
            hidden: vec![256; 4],
            activation: Activation::Relu,
            extra_bias_column: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_y == 0 || self.p == 0 || self.d_out == 0 {
            return Err(SetONetError::validation(
                "trunk dimensions must all be positive",
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(SetONetError::validation(
                "trunk needs at least one hidden layer of positive width",
            ));
        }
        Ok(())
    }

    /// Basis rows per query, i.e. p plus the optional constant multiplier.
    pub fn rows(&self) -> usize {
        self.p + usize::from(self.extra_bias_column)
    }
}

/// Trunk output on a block of queries.
#[derive(Debug)]
pub struct TrunkBasis {
    /// R x p x d_out basis values, R = number of query rows evaluated.
    pub basis: Array3<f64>,
    /// R x d_out multiplier for the constant term; None means multiply by 1.
    pub tau0: Option<Array2<f64>>,
}

pub struct Trunk {
    pub cfg: TrunkConfig,
    mlp: Mlp,
}

impl Trunk {
    pub fn new(cfg: TrunkConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut widths = vec![cfg.d_y];
        widths.extend_from_slice(&cfg.hidden);
        widths.push(cfg.rows() * cfg.d_out);
        Ok(Trunk { mlp: Mlp::new(&widths, cfg.activation, rng)?, cfg })
    }

    fn split(&self, out: Array2<f64>) -> TrunkBasis {
        let r = out.nrows();
        let full = out
            .to_shape((r, self.cfg.rows(), self.cfg.d_out))
            .expect("contiguous")
            .to_owned();
        if self.cfg.extra_bias_column {
            TrunkBasis {
                basis: full.slice(s![.., 1.., ..]).to_owned(),
                tau0: Some(full.slice(s![.., 0, ..]).to_owned()),
            }
        } else {
            TrunkBasis { basis: full, tau0: None }
        }
    }

    pub fn forward(&self, queries: ArrayView2<'_, f64>) -> Result<TrunkBasis> {
        self.check_queries(queries)?;
        Ok(self.split(self.mlp.forward(queries)))
    }

    pub fn forward_cached(&self, queries: ArrayView2<'_, f64>) -> Result<(TrunkBasis, MlpCache)> {
        self.check_queries(queries)?;
        let (out, cache) = self.mlp.forward_cached(queries);
        Ok((self.split(out), cache))
    }

    /// Gradient entry point matching `split`: callers hand back gradients for
    /// the basis block and (when present) the constant-multiplier column.
    pub fn backward(
        &mut self,
        cache: &MlpCache,
        d_basis: &Array3<f64>,
        d_tau0: Option<&Array2<f64>>,
    ) -> Result<()> {
        let (r, _, d_out) = d_basis.dim();
        let mut d_out_flat = Array3::zeros((r, self.cfg.rows(), d_out));
        if self.cfg.extra_bias_column {
            let d_tau0 = d_tau0.ok_or_else(|| {
                SetONetError::validation("trunk with a constant column needs its gradient")
            })?;
            d_out_flat.slice_mut(s![.., 0, ..]).assign(d_tau0);
            d_out_flat.slice_mut(s![.., 1.., ..]).assign(d_basis);
        } else {
            d_out_flat.assign(d_basis);
        }
        let flat = d_out_flat
            .to_shape((r, self.cfg.rows() * d_out))
            .expect("contiguous")
            .to_owned();
        self.mlp.backward(cache, flat.view());
        Ok(())
    }

    fn check_queries(&self, queries: ArrayView2<'_, f64>) -> Result<()> {
        if queries.ncols() != self.cfg.d_y {
            return Err(SetONetError::validation(format!(
                "query coordinate dim {} does not match trunk input dim {}",
                queries.ncols(),
                self.cfg.d_y
            )));
        }
        if queries.nrows() == 0 {
            return Err(SetONetError::validation("need at least one query"));
        }
        if queries.iter().any(|v| !v.is_finite()) {
            return Err(SetONetError::numerical("non-finite query coordinate"));
        }
        Ok(())
    }
}

impl Params for Trunk {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.mlp.visit_params(f);
    }
}

/// pred[b, q, j] = sum_k coeffs[b, k, j] * basis[q, k, j]
///               + bias[b, j] * (tau0[q, j] if present else 1).
///
/// One matrix product per output channel; the basis block is shared by every
/// sample in the batch.
pub fn synthesize(coeffs: &BatchCoefficients, basis: &TrunkBasis) -> Result<Array3<f64>> {
    let (b, p, d_out) = coeffs.coeffs.dim();
    let (n_q, p_t, d_t) = basis.basis.dim();
    if p != p_t || d_out != d_t {
        return Err(SetONetError::validation(format!(
            "coefficient block {p}x{d_out} does not match basis block {p_t}x{d_t}"
        )));
    }
    if let Some(t0) = &basis.tau0 {
        if t0.dim() != (n_q, d_out) {
            return Err(SetONetError::validation(
                "constant-multiplier column does not match the basis block",
            ));
        }
    }

    let mut pred = Array3::zeros((b, n_q, d_out));
    for j in 0..d_out {
        // (B x p) . (p x N_q)
        let c_j = coeffs.coeffs.slice(s![.., .., j]);
        let t_j = basis.basis.slice(s![.., .., j]);
        let prod = c_j.dot(&t_j.t());
        pred.slice_mut(s![.., .., j]).assign(&prod);

        match &basis.tau0 {
            Some(t0) => {
                let t0_j = t0.column(j);
                for bi in 0..b {
                    let scale = coeffs.bias[[bi, j]];
                    pred.slice_mut(s![bi, .., j])
                        .iter_mut()
                        .zip(t0_j.iter())
                        .for_each(|(pv, &tv)| *pv += scale * tv);
                }
            }
            None => {
                for bi in 0..b {
                    let bias = coeffs.bias[[bi, j]];
                    pred.slice_mut(s![bi, .., j]).mapv_inplace(|v| v + bias);
                }
            }
        }
    }
    Ok(pred)
}

/// Gradients of `synthesize` with respect to both factors.
///
/// Returns (d_coeffs, d_bias, d_basis, d_tau0); d_tau0 is Some iff the basis
/// carried a constant-multiplier column.
pub fn synthesize_backward(
    coeffs: &BatchCoefficients,
    basis: &TrunkBasis,
    d_pred: &Array3<f64>,
) -> (Array3<f64>, Array2<f64>, Array3<f64>, Option<Array2<f64>>) {
    let (b, p, d_out) = coeffs.coeffs.dim();
    let n_q = basis.basis.dim().0;

    let mut d_coeffs = Array3::zeros((b, p, d_out));
    let mut d_bias = Array2::zeros((b, d_out));
    let mut d_basis = Array3::zeros((n_q, p, d_out));
    let mut d_tau0 = basis.tau0.as_ref().map(|_| Array2::zeros((n_q, d_out)));

    for j in 0..d_out {
        let g_j = d_pred.slice(s![.., .., j]); // B x N_q
        let c_j = coeffs.coeffs.slice(s![.., .., j]); // B x p
        let t_j = basis.basis.slice(s![.., .., j]); // N_q x p

        d_coeffs.slice_mut(s![.., .., j]).assign(&g_j.dot(&t_j));
        d_basis.slice_mut(s![.., .., j]).assign(&g_j.t().dot(&c_j));

        match &basis.tau0 {
            Some(t0) => {
                let t0_j = t0.column(j);
                let mut db = d_bias.slice_mut(s![.., j]);
                for bi in 0..b {
                    db[bi] = g_j.row(bi).dot(&t0_j);
                }
                let dt0 = d_tau0.as_mut().expect("allocated above");
                let mut col = dt0.slice_mut(s![.., j]);
                let bias_j = coeffs.bias.slice(s![.., j]);
                // d_tau0[q] = sum_b g[b, q] * bias[b]
                let contrib: Array1<f64> = g_j.t().dot(&bias_j);
                col.assign(&contrib);
            }
            None => {
                d_bias
                    .slice_mut(s![.., j])
                    .assign(&g_j.sum_axis(Axis(1)));
            }
        }
    }
    (d_coeffs, d_bias, d_basis, d_tau0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2 as A2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_coeffs(b: usize, p: usize, d_out: usize, seed: u64) -> BatchCoefficients {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BatchCoefficients {
            coeffs: Array3::from_shape_fn((b, p, d_out), |_| rng.random_range(-1.0..1.0)),
            bias: A2::from_shape_fn((b, d_out), |_| rng.random_range(-1.0..1.0)),
        }
    }

    fn random_basis(n_q: usize, p: usize, d_out: usize, tau0: bool, seed: u64) -> TrunkBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TrunkBasis {
            basis: Array3::from_shape_fn((n_q, p, d_out), |_| rng.random_range(-1.0..1.0)),
            tau0: tau0.then(|| A2::from_shape_fn((n_q, d_out), |_| rng.random_range(-1.0..1.0))),
        }
    }

    #[test]
    fn default_trunk_matches_expected_parameter_count() {
        // [1, 256, 256, 256, 256, 32]
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trunk = Trunk::new(TrunkConfig::new(1, 32, 1), &mut rng).unwrap();
        assert_eq!(trunk.param_count(), 206_112);
    }

    #[test]
    fn constant_column_adds_one_row_per_query() {
        let mut cfg = TrunkConfig::new(2, 4, 2);
        cfg.hidden = vec![5];
        cfg.extra_bias_column = true;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trunk = Trunk::new(cfg, &mut rng).unwrap();
        let q = A2::from_shape_fn((3, 2), |(i, j)| (i + j) as f64 * 0.1);
        let out = trunk.forward(q.view()).unwrap();
        assert_eq!(out.basis.dim(), (3, 4, 2));
        assert_eq!(out.tau0.as_ref().unwrap().dim(), (3, 2));
    }

    #[test]
    fn split_layout_matches_flat_network_output() {
        let mut cfg = TrunkConfig::new(1, 3, 2);
        cfg.hidden = vec![6];
        cfg.extra_bias_column = true;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trunk = Trunk::new(cfg, &mut rng).unwrap();
        let q = A2::from_shape_fn((2, 1), |(i, _)| i as f64 - 0.5);
        let flat = trunk.mlp.forward(q.view()); // 2 x 8
        let out = trunk.forward(q.view()).unwrap();
        for qi in 0..2 {
            for j in 0..2 {
                assert_eq!(out.tau0.as_ref().unwrap()[[qi, j]], flat[[qi, j]]);
                for k in 0..3 {
                    assert_eq!(out.basis[[qi, k, j]], flat[[qi, (k + 1) * 2 + j]]);
                }
            }
        }
    }

    #[test]
    fn synthesis_matches_triple_loop_oracle() {
        for tau0 in [false, true] {
            let coeffs = random_coeffs(3, 5, 2, 10);
            let basis = random_basis(7, 5, 2, tau0, 11);
            let pred = synthesize(&coeffs, &basis).unwrap();
            for b in 0..3 {
                for q in 0..7 {
                    for j in 0..2 {
                        let mut expected = 0.0;
                        for k in 0..5 {
                            expected += coeffs.coeffs[[b, k, j]] * basis.basis[[q, k, j]];
                        }
                        expected += coeffs.bias[[b, j]]
                            * basis.tau0.as_ref().map_or(1.0, |t| t[[q, j]]);
                        assert!((pred[[b, q, j]] - expected).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn synthesis_is_linear_in_the_coefficients() {
        let basis = random_basis(6, 4, 1, false, 20);
        let c1 = random_coeffs(2, 4, 1, 21);
        let c2 = random_coeffs(2, 4, 1, 22);
        let a = 0.37;
        let mixed = BatchCoefficients {
            coeffs: a * &c1.coeffs + &c2.coeffs,
            bias: a * &c1.bias + &c2.bias,
        };
        let lhs = synthesize(&mixed, &basis).unwrap();
        let rhs = a * &synthesize(&c1, &basis).unwrap() + &synthesize(&c2, &basis).unwrap();
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_give_a_constant_prediction() {
        let mut coeffs = random_coeffs(2, 4, 1, 30);
        coeffs.coeffs.fill(0.0);
        let basis = random_basis(5, 4, 1, false, 31);
        let pred = synthesize(&coeffs, &basis).unwrap();
        for b in 0..2 {
            for q in 0..5 {
                assert!((pred[[b, q, 0]] - coeffs.bias[[b, 0]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn all_ones_basis_reduces_to_coefficient_sums() {
        let coeffs = random_coeffs(2, 3, 1, 40);
        let basis = TrunkBasis { basis: Array3::ones((4, 3, 1)), tau0: None };
        let pred = synthesize(&coeffs, &basis).unwrap();
        for b in 0..2 {
            let expected: f64 =
                coeffs.coeffs.slice(s![b, .., 0]).sum() + coeffs.bias[[b, 0]];
            for q in 0..4 {
                assert!((pred[[b, q, 0]] - expected).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn each_query_depends_only_on_its_own_basis_row() {
        let coeffs = random_coeffs(2, 4, 2, 50);
        let mut basis = random_basis(6, 4, 2, true, 51);
        let before = synthesize(&coeffs, &basis).unwrap();
        basis.basis[[3, 1, 0]] += 0.5;
        basis.tau0.as_mut().unwrap()[[3, 1]] -= 0.25;
        let after = synthesize(&coeffs, &basis).unwrap();
        for b in 0..2 {
            for q in 0..6 {
                if q == 3 {
                    continue; // the touched query may move
                }
                for j in 0..2 {
                    assert!(
                        (before[[b, q, j]] - after[[b, q, j]]).abs() <= 1e-15,
                        "query {q} channel {j} moved"
                    );
                }
            }
        }
        assert!((before[[0, 3, 0]] - after[[0, 3, 0]]).abs() > 1e-9);
    }

    #[test]
    fn synthesis_backward_matches_finite_differences() {
        for tau0 in [false, true] {
            let coeffs = random_coeffs(2, 3, 2, 60);
            let basis = random_basis(4, 3, 2, tau0, 61);
            let pred = synthesize(&coeffs, &basis).unwrap();
            let d_pred = 2.0 * &pred; // loss = sum pred^2
            let (dc, db, dt, dt0) = synthesize_backward(&coeffs, &basis, &d_pred);

            let h = 1e-6;
            let loss = |c: &BatchCoefficients, t: &TrunkBasis| {
                synthesize(c, t).unwrap().mapv(|v| v * v).sum()
            };

            let mut c = BatchCoefficients {
                coeffs: coeffs.coeffs.clone(),
                bias: coeffs.bias.clone(),
            };
            c.coeffs[[1, 2, 1]] += h;
            let lp = loss(&c, &basis);
            c.coeffs[[1, 2, 1]] -= 2.0 * h;
            let lm = loss(&c, &basis);
            assert!(((lp - lm) / (2.0 * h) - dc[[1, 2, 1]]).abs() < 1e-5);
            c.coeffs[[1, 2, 1]] += h;

            c.bias[[0, 1]] += h;
            let lp = loss(&c, &basis);
            c.bias[[0, 1]] -= 2.0 * h;
            let lm = loss(&c, &basis);
            assert!(((lp - lm) / (2.0 * h) - db[[0, 1]]).abs() < 1e-5);
            c.bias[[0, 1]] += h;

            let mut t = TrunkBasis { basis: basis.basis.clone(), tau0: basis.tau0.clone() };
            t.basis[[2, 1, 0]] += h;
            let lp = loss(&coeffs, &t);
            t.basis[[2, 1, 0]] -= 2.0 * h;
            let lm = loss(&coeffs, &t);
            assert!(((lp - lm) / (2.0 * h) - dt[[2, 1, 0]]).abs() < 1e-5);
            t.basis[[2, 1, 0]] += h;

            if tau0 {
                let t0 = t.tau0.as_mut().unwrap();
                t0[[3, 0]] += h;
                let lp = loss(&coeffs, &t);
                let t0 = t.tau0.as_mut().unwrap();
                t0[[3, 0]] -= 2.0 * h;
                let lm = loss(&coeffs, &t);
                let g = dt0.as_ref().unwrap()[[3, 0]];
                assert!(((lp - lm) / (2.0 * h) - g).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn trunk_gradients_match_finite_differences() {
        let mut cfg = TrunkConfig::new(2, 3, 1);
        cfg.hidden = vec![5, 5];
        cfg.extra_bias_column = true;
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let mut trunk = Trunk::new(cfg, &mut rng).unwrap();
        let q = A2::from_shape_fn((4, 2), |_| rng.random_range(-1.0..1.0));

        let loss = |t: &Trunk| {
            let out = t.forward(q.view()).unwrap();
            out.basis.mapv(|v| v * v).sum() + out.tau0.unwrap().mapv(|v| v * v).sum()
        };

        let (out, cache) = trunk.forward_cached(q.view()).unwrap();
        let d_basis = 2.0 * &out.basis;
        let d_tau0 = 2.0 * out.tau0.as_ref().unwrap();
        trunk.zero_grads();
        trunk.backward(&cache, &d_basis, Some(&d_tau0)).unwrap();

        let mut grads: Vec<Vec<f64>> = Vec::new();
        trunk.visit_params(&mut |p| grads.push(p.grad.to_vec()));

        let h = 1e-5;
        for t in 0..grads.len() {
            let len = grads[t].len();
            let probes: std::collections::BTreeSet<usize> =
                [0, len / 2, len - 1].into_iter().collect();
            for &i in &probes {
                let mut save = 0.0;
                let mut k = 0;
                trunk.visit_params(&mut |p| {
                    if k == t {
                        save = p.value[i];
                        p.value[i] += h;
                    }
                    k += 1;
                });
                let lp = loss(&trunk);
                k = 0;
                trunk.visit_params(&mut |p| {
                    if k == t {
                        p.value[i] = save - h;
                    }
                    k += 1;
                });
                let lm = loss(&trunk);
                k = 0;
                trunk.visit_params(&mut |p| {
                    if k == t {
                        p.value[i] = save;
                    }
                    k += 1;
                });
                let fd = (lp - lm) / (2.0 * h);
                let an = grads[t][i];
                assert!(
                    (fd - an).abs() <= 1e-4 * (1.0 + fd.abs().max(an.abs())),
                    "tensor {t} entry {i}: fd={fd} an={an}"
                );
            }
        }
    }

    #[test]
    fn rejects_bad_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let mut cfg = TrunkConfig::new(2, 2, 1);
        cfg.hidden = vec![4];
        let trunk = Trunk::new(cfg, &mut rng).unwrap();
        assert_eq!(
            trunk.forward(A2::zeros((3, 1)).view()).unwrap_err().exit_code(),
            2
        );
        let mut q = A2::zeros((3, 2));
        q[[1, 0]] = f64::NAN;
        assert_eq!(trunk.forward(q.view()).unwrap_err().exit_code(), 3);
    }
}
