//! Pooled branch variants: a shared feature map over [PE(x_i), u_i] followed
//! by attention, mean, or sum aggregation and a readout to coefficients.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Result, SetONetError};
use crate::nn::{Linear, Mlp, MlpCache, ParamRef, Params, Tensor1, Tensor2};
use crate::pe::encode_positions;

use super::{BatchCoefficients, BranchCoefficients, BranchConfig, BranchVariant, SensorBatch};
use crate::sensors::SensorSet;

/// Cross-attention with one query row against per-sample key/value rows,
/// packed q/k/v/out projections (the torch parameter layout).
pub struct MultiheadAttention {
    pub heads: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
}

struct MhaCache {
    /// 1 x E projected query (token is shared across the batch).
    q: Array2<f64>,
    /// (B*M) x E projected keys and values.
    k: Array2<f64>,
    v: Array2<f64>,
    /// B x heads x M attention rows.
    alpha: Array3<f64>,
    /// B x E concatenated head outputs (input of the out projection).
    ctx: Array2<f64>,
    m: usize,
}

impl MultiheadAttention {
    pub fn new(embed: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || embed % heads != 0 {
            return Err(SetONetError::validation(format!(
                "embed dim {embed} must split evenly across {heads} heads"
            )));
        }
        Ok(MultiheadAttention {
            heads,
            wq: Linear::new(embed, embed, true, rng),
            wk: Linear::new(embed, embed, true, rng),
            wv: Linear::new(embed, embed, true, rng),
            wo: Linear::new(embed, embed, true, rng),
        })
    }

    /// token: 1 x E; kv: B x M x E (keys and values are the same features).
    /// Returns B x E pooled rows.
    fn forward_cached(&self, token: ArrayView2<'_, f64>, kv: &Array3<f64>) -> (Array2<f64>, MhaCache) {
        let (b, m, e) = kv.dim();
        let hd = e / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let kv_in = kv.to_shape((b * m, e)).expect("contiguous").to_owned();
        let q = self.wq.forward(token);
        let k = self.wk.forward(kv_in.view());
        let v = self.wv.forward(kv_in.view());

        let mut alpha = Array3::zeros((b, self.heads, m));
        let mut ctx = Array2::zeros((b, e));
        for bi in 0..b {
            for h in 0..self.heads {
                let cols = h * hd..(h + 1) * hd;
                let qh = q.slice(s![0, cols.clone()]);
                // scores over sensors, then softmax
                let mut row = Array1::zeros(m);
                for i in 0..m {
                    let kh = k.slice(s![bi * m + i, cols.clone()]);
                    let dot: f64 = qh.iter().zip(kh.iter()).map(|(a, b)| a * b).sum();
                    row[i] = dot * scale;
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|x| (x - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|x| x / sum);

                for i in 0..m {
                    let vh = v.slice(s![bi * m + i, cols.clone()]);
                    let a = row[i];
                    ctx.slice_mut(s![bi, cols.clone()])
                        .iter_mut()
                        .zip(vh.iter())
                        .for_each(|(c, &vv)| *c += a * vv);
                }
                alpha.slice_mut(s![bi, h, ..]).assign(&row);
            }
        }
        let out = self.wo.forward(ctx.view());
        (out, MhaCache { q, k, v, alpha, ctx, m })
    }

}

impl Params for MultiheadAttention {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.wq.visit_params(f);
        self.wk.visit_params(f);
        self.wv.visit_params(f);
        self.wo.visit_params(f);
    }
}

pub struct PooledBranch {
    cfg: BranchConfig,
    v_net: Mlp,
    rho: Mlp,
    /// Attention pooling only: one learnable token and the attention block.
    token: Option<Tensor2>,
    mha: Option<MultiheadAttention>,
    b0: Tensor1,
    cache: Option<Cache>,
}

struct Cache {
    b: usize,
    m: usize,
    v_cache: MlpCache,
    /// B x M x d_v sensor features.
    v_out: Array3<f64>,
    mha: Option<MhaCache>,
    rho_cache: MlpCache,
}

impl PooledBranch {
    pub fn new(cfg: &BranchConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut v_widths = vec![cfg.pe.embed_dim + cfg.d_u];
        v_widths.extend_from_slice(&cfg.value_net_hidden);
        v_widths.push(cfg.d_v);

        let mut rho_widths = vec![cfg.d_v];
        rho_widths.extend_from_slice(&cfg.rho_hidden);
        rho_widths.push(cfg.p * cfg.d_out);

        let (token, mha) = if cfg.variant == BranchVariant::Attention {
            (
                Some(Tensor2::gaussian(1, cfg.d_v, 0.02, rng)),
                Some(MultiheadAttention::new(cfg.d_v, cfg.heads, rng)?),
            )
        } else {
            (None, None)
        };

        Ok(PooledBranch {
            cfg: cfg.clone(),
            v_net: Mlp::new(&v_widths, crate::nn::Activation::Relu, rng)?,
            rho: Mlp::new(&rho_widths, crate::nn::Activation::Relu, rng)?,
            token,
            mha,
            b0: Tensor1::zeros(cfg.d_out),
            cache: None,
        })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.cfg
    }

    pub fn forward(&mut self, s: &SensorSet) -> Result<BranchCoefficients> {
        Ok(self.forward_batch(&SensorBatch::single(s))?.sample(0))
    }

    pub fn forward_batch(&mut self, batch: &SensorBatch) -> Result<BatchCoefficients> {
        let (b, m, _) = batch.values.dim();
        let cfg = &self.cfg;
        let (d_v, p, d_out) = (cfg.d_v, cfg.p, cfg.d_out);

        // Per-sensor features from [PE(x), u].
        let d_pe = cfg.pe.embed_dim;
        let mut v_in = Array2::zeros((b * m, d_pe + cfg.d_u));
        match &batch.locations {
            super::BatchLocations::Shared(locs) => {
                let e = encode_positions(locs.view(), &cfg.pe)?;
                for bi in 0..b {
                    v_in.slice_mut(s![bi * m..(bi + 1) * m, ..d_pe]).assign(&e);
                }
            }
            super::BatchLocations::PerSample(locs) => {
                let flat = locs.to_shape((b * m, cfg.d_x)).expect("contiguous");
                let e = encode_positions(flat.view(), &cfg.pe)?;
                v_in.slice_mut(s![.., ..d_pe]).assign(&e);
            }
        }
        for bi in 0..b {
            v_in.slice_mut(s![bi * m..(bi + 1) * m, d_pe..])
                .assign(&batch.values.index_axis(Axis(0), bi));
        }

        let (v_flat, v_cache) = self.v_net.forward_cached(v_in.view());
        let v_out = v_flat.to_shape((b, m, d_v)).expect("contiguous").to_owned();

        // Aggregate to one row per sample.
        let (pooled, mha_cache) = match cfg.variant {
            BranchVariant::Mean => (v_out.mean_axis(Axis(1)).expect("m >= 1"), None),
            BranchVariant::Sum => (v_out.sum_axis(Axis(1)), None),
            BranchVariant::Attention => {
                let token = self.token.as_ref().expect("attention token");
                let mha = self.mha.as_ref().expect("attention block");
                let (out, cache) = mha.forward_cached(token.v.view(), &v_out);
                (out, Some(cache))
            }
            _ => unreachable!("pooled branch variants only"),
        };

        let (flat, rho_cache) = self.rho.forward_cached(pooled.view());
        let coeffs = flat.to_shape((b, p, d_out)).expect("contiguous").to_owned();

        let mut bias = Array2::zeros((b, d_out));
        for mut row in bias.rows_mut() {
            row.assign(&self.b0.v);
        }

        self.cache = Some(Cache { b, m, v_cache, v_out, mha: mha_cache, rho_cache });
        Ok(BatchCoefficients { coeffs, bias })
    }

    pub fn backward_batch(&mut self, d_coeffs: &Array3<f64>, d_bias: &Array2<f64>) -> Result<()> {
        let cache = self.cache.take().expect("forward_batch must run before backward_batch");
        let cfg = &self.cfg;
        let (b, m) = (cache.b, cache.m);
        let d_v = cfg.d_v;

        self.b0.g += &d_bias.sum_axis(Axis(0));

        let d_flat = d_coeffs
            .to_shape((b, cfg.p * cfg.d_out))
            .expect("contiguous")
            .to_owned();
        let d_pooled = self.rho.backward(&cache.rho_cache, d_flat.view());

        let d_v_out: Array3<f64> = match cfg.variant {
            BranchVariant::Mean => {
                let mut d = Array3::zeros((b, m, d_v));
                let inv = 1.0 / m as f64;
                for bi in 0..b {
                    for i in 0..m {
                        d.slice_mut(s![bi, i, ..])
                            .iter_mut()
                            .zip(d_pooled.row(bi).iter())
                            .for_each(|(g, &dp)| *g = dp * inv);
                    }
                }
                d
            }
            BranchVariant::Sum => {
                let mut d = Array3::zeros((b, m, d_v));
                for bi in 0..b {
                    for i in 0..m {
                        d.slice_mut(s![bi, i, ..]).assign(&d_pooled.row(bi));
                    }
                }
                d
            }
            BranchVariant::Attention => {
                let mha_cache = cache.mha.as_ref().expect("attention cache");
                let mha = self.mha.as_mut().expect("attention block");
                let token = self.token.as_mut().expect("attention token");
                let kv_in = cache.v_out.to_shape((b * m, d_v)).expect("contiguous");
                let (d_token, d_kv) = mha.backward_with_token(
                    mha_cache,
                    token.v.view(),
                    kv_in.view(),
                    d_pooled.view(),
                );
                token.g += &d_token;
                d_kv
            }
            _ => unreachable!(),
        };

        let d_v_flat = d_v_out.to_shape((b * m, d_v)).expect("contiguous");
        self.v_net.backward(&cache.v_cache, d_v_flat.view());
        Ok(())
    }
}

impl MultiheadAttention {
    /// Backward with the forward inputs supplied explicitly: the token row is
    /// a parameter of the enclosing branch and kv_in its per-sensor features.
    fn backward_with_token(
        &mut self,
        cache: &MhaCache,
        token: ArrayView2<'_, f64>,
        kv_in: ArrayView2<'_, f64>,
        d_out: ArrayView2<'_, f64>,
    ) -> (Array2<f64>, Array3<f64>) {
        let (b, e) = (d_out.nrows(), d_out.ncols());
        let m = cache.m;
        let hd = e / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let d_ctx = self.wo.backward(cache.ctx.view(), d_out);

        let mut d_q = Array2::<f64>::zeros((1, e));
        let mut d_k = Array2::<f64>::zeros((b * m, e));
        let mut d_v = Array2::<f64>::zeros((b * m, e));
        for bi in 0..b {
            for h in 0..self.heads {
                let cols = h * hd..(h + 1) * hd;
                let alpha = cache.alpha.slice(s![bi, h, ..]);
                let d_ctx_h = d_ctx.slice(s![bi, cols.clone()]);

                let mut d_alpha = Array1::zeros(m);
                for i in 0..m {
                    let vh = cache.v.slice(s![bi * m + i, cols.clone()]);
                    d_alpha[i] = d_ctx_h.dot(&vh);
                    d_v.slice_mut(s![bi * m + i, cols.clone()])
                        .iter_mut()
                        .zip(d_ctx_h.iter())
                        .for_each(|(dv, &g)| *dv += alpha[i] * g);
                }
                let dot: f64 = d_alpha.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
                let d_score = Array1::from_shape_fn(m, |i| alpha[i] * (d_alpha[i] - dot));

                let qh = cache.q.slice(s![0, cols.clone()]);
                for i in 0..m {
                    let kh = cache.k.slice(s![bi * m + i, cols.clone()]);
                    let g = d_score[i] * scale;
                    d_q.slice_mut(s![0, cols.clone()])
                        .iter_mut()
                        .zip(kh.iter())
                        .for_each(|(dq, &kv)| *dq += g * kv);
                    d_k.slice_mut(s![bi * m + i, cols.clone()])
                        .iter_mut()
                        .zip(qh.iter())
                        .for_each(|(dk, &qv)| *dk += g * qv);
                }
            }
        }

        let mut d_kv_flat = self.wk.backward(kv_in, d_k.view());
        d_kv_flat += &self.wv.backward(kv_in, d_v.view());
        let d_token = self.wq.backward(token, d_q.view());
        let d_kv = d_kv_flat.to_shape((b, m, e)).expect("contiguous").to_owned();
        (d_token, d_kv)
    }
}

impl Params for PooledBranch {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.v_net.visit_params(f);
        self.rho.visit_params(f);
        if let Some(token) = &mut self.token {
            token.visit_params(f);
        }
        if let Some(mha) = &mut self.mha {
            mha.visit_params(f);
        }
        self.b0.visit_params(f);
    }
}
