//! Key-variant branch: learnable query tokens attend to position-only keys,
//! with sensor values entering through a separate lightweight value map.
//!
//! Per sample: K_i = k_net(PE(x_i)), V_i = v_net(u_i [, x_i]),
//! S = Q K^T / sqrt(d_k), A[k,i] = w_i * mix(S[k,i]) / sum_j w_j, P = A V,
//! R = rho_tok(P) row-wise, coeffs = W R (a linear map across the token
//! dimension) plus a learnable output bias.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::error::Result;
use crate::nn::{Linear, Mlp, MlpCache, ParamRef, Params, Tensor1, Tensor2};
use crate::pe::encode_positions;

use super::{BatchCoefficients, BatchLocations, BranchCoefficients, BranchConfig, SensorBatch};
use crate::sensors::SensorSet;

pub struct KeyBranch {
    cfg: BranchConfig,
    k_net: Mlp,
    v_net: Mlp,
    rho_tok: Mlp,
    /// n_pool x d_k learnable query tokens.
    q: Tensor2,
    /// Token projection n_pool -> p, applied across the token dimension.
    w_read: Linear,
    b0: Tensor1,
    cache: Option<Cache>,
}

struct Cache {
    /// True when all samples share one sensor layout (K computed once).
    shared_k: bool,
    b: usize,
    m: usize,
    k_cache: MlpCache,
    /// M x d_k (shared) or (B*M) x d_k.
    k_out: Array2<f64>,
    /// B x n x M raw scores.
    scores: Array3<f64>,
    /// B x n x M mixing matrices.
    a: Array3<f64>,
    /// B x M materialized sensor weights with their sums.
    weights: Array2<f64>,
    wsum: Array1<f64>,
    v_cache: MlpCache,
    /// B x M x d_v.
    v_out: Array3<f64>,
    rho_cache: MlpCache,
    /// (B*d_out) x n input rows of the token projection.
    w_in: Array2<f64>,
}

impl KeyBranch {
    pub fn new(cfg: &BranchConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut k_widths = vec![cfg.pe.embed_dim];
        k_widths.extend_from_slice(&cfg.key_net_hidden);
        k_widths.push(cfg.d_k);

        let v_in = cfg.d_u + if cfg.augment_values_with_coords { cfg.d_x } else { 0 };
        let mut v_widths = vec![v_in];
        v_widths.extend_from_slice(&cfg.value_net_hidden);
        v_widths.push(cfg.d_v);

        let mut rho_widths = vec![cfg.d_v];
        rho_widths.extend_from_slice(&cfg.rho_tok_hidden);
        rho_widths.push(cfg.d_out);

        Ok(KeyBranch {
            cfg: cfg.clone(),
            k_net: Mlp::new(&k_widths, crate::nn::Activation::Relu, rng)?,
            v_net: Mlp::new(&v_widths, crate::nn::Activation::Relu, rng)?,
            rho_tok: Mlp::new(&rho_widths, crate::nn::Activation::Relu, rng)?,
            q: Tensor2::gaussian(cfg.n_pool, cfg.d_k, 0.02, rng),
            w_read: Linear::new(cfg.n_pool, cfg.p, true, rng),
            b0: Tensor1::zeros(cfg.d_out),
            cache: None,
        })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.cfg
    }

    /// Value-net input rows for one sample: values, optionally with raw coords.
    fn value_input_rows(
        &self,
        values: ArrayView2<'_, f64>,
        locations: ArrayView2<'_, f64>,
        out: &mut Array2<f64>,
        row0: usize,
    ) {
        let m = values.nrows();
        let d_u = self.cfg.d_u;
        out.slice_mut(s![row0..row0 + m, ..d_u]).assign(&values);
        if self.cfg.augment_values_with_coords {
            out.slice_mut(s![row0..row0 + m, d_u..]).assign(&locations);
        }
    }

    pub fn forward(&mut self, s: &SensorSet) -> Result<BranchCoefficients> {
        Ok(self.forward_batch(&SensorBatch::single(s))?.sample(0))
    }

    pub fn forward_batch(&mut self, batch: &SensorBatch) -> Result<BatchCoefficients> {
        let (b, m, _) = batch.values.dim();
        let cfg = &self.cfg;
        let (n, d_k, d_v, p, d_out) = (cfg.n_pool, cfg.d_k, cfg.d_v, cfg.p, cfg.d_out);
        let scale = 1.0 / (d_k as f64).sqrt();

        // Keys from positional encodings; shared layouts go through once.
        let shared_k = matches!(batch.locations, BatchLocations::Shared(_));
        let (k_out, k_cache) = match &batch.locations {
            BatchLocations::Shared(locs) => {
                let e = encode_positions(locs.view(), &cfg.pe)?;
                self.k_net.forward_cached(e.view())
            }
            BatchLocations::PerSample(locs) => {
                let flat = locs.to_shape((b * m, cfg.d_x)).expect("contiguous");
                let e = encode_positions(flat.view(), &cfg.pe)?;
                self.k_net.forward_cached(e.view())
            }
        };

        // Scores and mixing matrices per sample.
        let mut scores = Array3::zeros((b, n, m));
        let mut a = Array3::zeros((b, n, m));
        let mut weights = Array2::zeros((b, m));
        let mut wsum = Array1::zeros(b);
        let shared_scores = if shared_k {
            Some(self.q.v.dot(&k_out.t()) * scale)
        } else {
            None
        };
        for bi in 0..b {
            let s_b = match &shared_scores {
                Some(sh) => sh.clone(),
                None => {
                    let k_b = k_out.slice(s![bi * m..(bi + 1) * m, ..]);
                    self.q.v.dot(&k_b.t()) * scale
                }
            };
            let w_b = batch.weights_of(bi);
            weights.row_mut(bi).assign(&w_b);
            let ws: f64 = w_b.sum();
            wsum[bi] = ws;
            let mut a_b = s_b.clone();
            for mut row in a_b.rows_mut() {
                for (v, &w) in row.iter_mut().zip(w_b.iter()) {
                    *v = w * cfg.mix.apply(*v) / ws;
                }
            }
            scores.index_axis_mut(Axis(0), bi).assign(&s_b);
            a.index_axis_mut(Axis(0), bi).assign(&a_b);
        }

        // Values through the value map, all samples stacked.
        let v_in_dim = self.v_net.in_dim();
        let mut v_in = Array2::zeros((b * m, v_in_dim));
        for bi in 0..b {
            self.value_input_rows(
                batch.values.index_axis(Axis(0), bi),
                batch.locations_of(bi),
                &mut v_in,
                bi * m,
            );
        }
        let (v_flat, v_cache) = self.v_net.forward_cached(v_in.view());
        let v_out = v_flat.to_shape((b, m, d_v)).expect("contiguous").to_owned();

        // Pooled tokens P = A V, stacked to (B*n) x d_v.
        let mut pooled = Array2::zeros((b * n, d_v));
        for bi in 0..b {
            let p_b = a.index_axis(Axis(0), bi).dot(&v_out.index_axis(Axis(0), bi));
            pooled.slice_mut(s![bi * n..(bi + 1) * n, ..]).assign(&p_b);
        }

        // Row-wise readout to d_out per token, then project across tokens.
        let (r_flat, rho_cache) = self.rho_tok.forward_cached(pooled.view());
        let mut w_in = Array2::zeros((b * d_out, n));
        for bi in 0..b {
            for j in 0..d_out {
                for i in 0..n {
                    w_in[[bi * d_out + j, i]] = r_flat[[bi * n + i, j]];
                }
            }
        }
        let c_perm = self.w_read.forward(w_in.view()); // (B*d_out) x p
        let mut coeffs = Array3::zeros((b, p, d_out));
        for bi in 0..b {
            for j in 0..d_out {
                for k in 0..p {
                    coeffs[[bi, k, j]] = c_perm[[bi * d_out + j, k]];
                }
            }
        }

        let mut bias = Array2::zeros((b, d_out));
        for mut row in bias.rows_mut() {
            row.assign(&self.b0.v);
        }

        self.cache = Some(Cache {
            shared_k,
            b,
            m,
            k_cache,
            k_out,
            scores,
            a,
            weights,
            wsum,
            v_cache,
            v_out,
            rho_cache,
            w_in,
        });
        Ok(BatchCoefficients { coeffs, bias })
    }

    pub fn backward_batch(&mut self, d_coeffs: &Array3<f64>, d_bias: &Array2<f64>) -> Result<()> {
        let cache = self.cache.take().expect("forward_batch must run before backward_batch");
        let cfg = &self.cfg;
        let (b, m) = (cache.b, cache.m);
        let (n, d_k, d_v, p, d_out) = (cfg.n_pool, cfg.d_k, cfg.d_v, cfg.p, cfg.d_out);
        let scale = 1.0 / (d_k as f64).sqrt();

        // Output bias.
        self.b0.g += &d_bias.sum_axis(Axis(0));

        // Token projection backward: permute d_coeffs to (B*d_out) x p rows.
        let mut d_perm = Array2::zeros((b * d_out, p));
        for bi in 0..b {
            for j in 0..d_out {
                for k in 0..p {
                    d_perm[[bi * d_out + j, k]] = d_coeffs[[bi, k, j]];
                }
            }
        }
        let d_w_in = self.w_read.backward(cache.w_in.view(), d_perm.view());
        let mut d_r = Array2::zeros((b * n, d_out));
        for bi in 0..b {
            for j in 0..d_out {
                for i in 0..n {
                    d_r[[bi * n + i, j]] = d_w_in[[bi * d_out + j, i]];
                }
            }
        }

        // Row-wise readout backward.
        let d_pooled = self.rho_tok.backward(&cache.rho_cache, d_r.view());

        // P = A V: split into value and mixing gradients.
        let mut d_v_flat = Array2::zeros((b * m, d_v));
        let mut d_q = Array2::zeros((n, d_k));
        let mut d_k_shared = Array2::zeros(cache.k_out.raw_dim());
        for bi in 0..b {
            let d_p_b = d_pooled.slice(s![bi * n..(bi + 1) * n, ..]);
            let a_b = cache.a.index_axis(Axis(0), bi);
            let v_b = cache.v_out.index_axis(Axis(0), bi);

            d_v_flat
                .slice_mut(s![bi * m..(bi + 1) * m, ..])
                .assign(&a_b.t().dot(&d_p_b));

            // dA = dP V^T, then through the weighted mix rule to dS.
            let d_a_b = d_p_b.dot(&v_b.t());
            let s_b = cache.scores.index_axis(Axis(0), bi);
            let ws = cache.wsum[bi];
            let mut d_s_b = d_a_b;
            for (mut row, s_row) in d_s_b.rows_mut().into_iter().zip(s_b.rows()) {
                for ((g, &sv), &w) in
                    row.iter_mut().zip(s_row.iter()).zip(cache.weights.row(bi).iter())
                {
                    *g *= w * cfg.mix.derivative(sv) / ws;
                }
            }

            // S = Q K^T * scale.
            let k_b = if cache.shared_k {
                cache.k_out.view()
            } else {
                cache.k_out.slice(s![bi * m..(bi + 1) * m, ..])
            };
            d_q += &(d_s_b.dot(&k_b) * scale);
            let d_k_b = d_s_b.t().dot(&self.q.v) * scale;
            if cache.shared_k {
                d_k_shared += &d_k_b;
            } else {
                d_k_shared.slice_mut(s![bi * m..(bi + 1) * m, ..]).assign(&d_k_b);
            }
        }
        self.q.g += &d_q;

        self.v_net.backward(&cache.v_cache, d_v_flat.view());
        self.k_net.backward(&cache.k_cache, d_k_shared.view());
        Ok(())
    }
}

impl Params for KeyBranch {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.k_net.visit_params(f);
        self.v_net.visit_params(f);
        self.rho_tok.visit_params(f);
        self.q.visit_params(f);
        self.w_read.visit_params(f);
        self.b0.visit_params(f);
    }
}
