//! Variable-input branch with per-head softmax pooling: coordinates and
//! values get separate encoders, their sum is scored and averaged head by
//! head, and one readout MLP emits the synthesis constant (row 0) together
//! with the coefficients (rows 1..=p).

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;

use crate::error::Result;
use crate::nn::{Activation, Mlp, MlpCache, ParamRef, Params};

use super::{BatchCoefficients, BatchLocations, BranchCoefficients, BranchConfig, SensorBatch};
use crate::sensors::SensorSet;

pub struct VidonBranch {
    cfg: BranchConfig,
    enc_x: Mlp,
    enc_u: Mlp,
    /// One scalar-score net and one value net per head.
    score: Vec<Mlp>,
    value: Vec<Mlp>,
    out: Mlp,
    cache: Option<Cache>,
}

struct Cache {
    b: usize,
    m: usize,
    shared_x: bool,
    x_cache: MlpCache,
    u_cache: MlpCache,
    /// (B*M) x d_enc combined sensor embeddings.
    e_flat: Array2<f64>,
    score_caches: Vec<MlpCache>,
    value_caches: Vec<MlpCache>,
    /// Per head: B x M softmax weights and (B*M) x head_out values.
    alphas: Vec<Array2<f64>>,
    vals: Vec<Array2<f64>>,
    out_cache: MlpCache,
}

impl VidonBranch {
    pub fn new(cfg: &BranchConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = &cfg.vidon;
        let enc_x = Mlp::new(&[cfg.d_x, d.enc_hidden, d.d_enc], Activation::Relu, rng)?;
        let enc_u = Mlp::new(&[cfg.d_u, d.enc_hidden, d.d_enc], Activation::Relu, rng)?;
        let mut score = Vec::with_capacity(d.heads);
        let mut value = Vec::with_capacity(d.heads);
        for _ in 0..d.heads {
            score.push(Mlp::new(&[d.d_enc, d.head_hidden, 1], Activation::Relu, rng)?);
            value.push(Mlp::new(&[d.d_enc, d.head_hidden, d.head_out], Activation::Relu, rng)?);
        }
        let (w1, w2) = d.out_hidden;
        let out = Mlp::new(
            &[d.heads * d.head_out, w1, w2, (cfg.p + 1) * cfg.d_out],
            Activation::Relu,
            rng,
        )?;
        Ok(VidonBranch { cfg: cfg.clone(), enc_x, enc_u, score, value, out, cache: None })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.cfg
    }

    pub fn forward(&mut self, s: &SensorSet) -> Result<BranchCoefficients> {
        Ok(self.forward_batch(&SensorBatch::single(s))?.sample(0))
    }

    pub fn forward_batch(&mut self, batch: &SensorBatch) -> Result<BatchCoefficients> {
        let (b, m, d_u) = batch.values.dim();
        let cfg = &self.cfg;
        let d = &cfg.vidon;

        // Combined embedding e_i = enc_x(x_i) + enc_u(u_i), one row per sensor.
        let u_flat = batch.values.to_shape((b * m, d_u)).expect("contiguous").to_owned();
        let (u_out, u_cache) = self.enc_u.forward_cached(u_flat.view());

        let (shared_x, x_out, x_cache) = match &batch.locations {
            BatchLocations::Shared(locs) => {
                let (o, c) = self.enc_x.forward_cached(locs.view());
                (true, o, c)
            }
            BatchLocations::PerSample(locs) => {
                let flat = locs.to_shape((b * m, cfg.d_x)).expect("contiguous").to_owned();
                let (o, c) = self.enc_x.forward_cached(flat.view());
                (false, o, c)
            }
        };

        let mut e_flat = u_out;
        if shared_x {
            for bi in 0..b {
                let mut rows = e_flat.slice_mut(s![bi * m..(bi + 1) * m, ..]);
                rows += &x_out;
            }
        } else {
            e_flat += &x_out;
        }

        // Per-head softmax-weighted averages of the value features.
        let mut alphas = Vec::with_capacity(d.heads);
        let mut vals = Vec::with_capacity(d.heads);
        let mut score_caches = Vec::with_capacity(d.heads);
        let mut value_caches = Vec::with_capacity(d.heads);
        let mut concat = Array2::zeros((b, d.heads * d.head_out));
        for h in 0..d.heads {
            let (sc, sc_cache) = self.score[h].forward_cached(e_flat.view());
            let (va, va_cache) = self.value[h].forward_cached(e_flat.view());

            let mut alpha = Array2::zeros((b, m));
            for bi in 0..b {
                let mut row = alpha.row_mut(bi);
                for i in 0..m {
                    row[i] = sc[[bi * m + i, 0]];
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|x| (x - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|x| x / sum);
            }
            for bi in 0..b {
                let mut dst = concat.slice_mut(s![bi, h * d.head_out..(h + 1) * d.head_out]);
                for i in 0..m {
                    let a = alpha[[bi, i]];
                    dst.iter_mut()
                        .zip(va.row(bi * m + i).iter())
                        .for_each(|(c, &v)| *c += a * v);
                }
            }
            alphas.push(alpha);
            vals.push(va);
            score_caches.push(sc_cache);
            value_caches.push(va_cache);
        }

        let (flat, out_cache) = self.out.forward_cached(concat.view());

        // Row 0 of each (p+1) x d_out block is the synthesis constant.
        let full = flat
            .to_shape((b, cfg.p + 1, cfg.d_out))
            .expect("contiguous")
            .to_owned();
        let bias = full.slice(s![.., 0, ..]).to_owned();
        let coeffs = full.slice(s![.., 1.., ..]).to_owned();

        self.cache = Some(Cache {
            b,
            m,
            shared_x,
            x_cache,
            u_cache,
            e_flat,
            score_caches,
            value_caches,
            alphas,
            vals,
            out_cache,
        });
        Ok(BatchCoefficients { coeffs, bias })
    }

    pub fn backward_batch(&mut self, d_coeffs: &Array3<f64>, d_bias: &Array2<f64>) -> Result<()> {
        let cache = self.cache.take().expect("forward_batch must run before backward_batch");
        let cfg = &self.cfg;
        let d = cfg.vidon.clone();
        let (b, m) = (cache.b, cache.m);

        let mut d_full = Array3::zeros((b, cfg.p + 1, cfg.d_out));
        d_full.slice_mut(s![.., 0, ..]).assign(d_bias);
        d_full.slice_mut(s![.., 1.., ..]).assign(d_coeffs);
        let d_flat = d_full
            .to_shape((b, (cfg.p + 1) * cfg.d_out))
            .expect("contiguous")
            .to_owned();

        let d_concat = self.out.backward(&cache.out_cache, d_flat.view());

        let mut d_e = Array2::<f64>::zeros(cache.e_flat.dim());
        for h in 0..d.heads {
            let alpha = &cache.alphas[h];
            let va = &cache.vals[h];
            let d_head = d_concat.slice(s![.., h * d.head_out..(h + 1) * d.head_out]);

            let mut d_vals = Array2::<f64>::zeros((b * m, d.head_out));
            let mut d_scores = Array2::<f64>::zeros((b * m, 1));
            for bi in 0..b {
                let g = d_head.row(bi);
                let mut d_alpha = vec![0.0; m];
                for i in 0..m {
                    let a = alpha[[bi, i]];
                    d_vals
                        .row_mut(bi * m + i)
                        .iter_mut()
                        .zip(g.iter())
                        .for_each(|(dv, &gv)| *dv = a * gv);
                    d_alpha[i] = g.dot(&va.row(bi * m + i));
                }
                let dot: f64 = d_alpha
                    .iter()
                    .enumerate()
                    .map(|(i, da)| da * alpha[[bi, i]])
                    .sum();
                for i in 0..m {
                    d_scores[[bi * m + i, 0]] = alpha[[bi, i]] * (d_alpha[i] - dot);
                }
            }
            d_e += &self.value[h].backward(&cache.value_caches[h], d_vals.view());
            d_e += &self.score[h].backward(&cache.score_caches[h], d_scores.view());
        }

        self.enc_u.backward(&cache.u_cache, d_e.view());
        if cache.shared_x {
            let d3 = d_e
                .to_shape((b, m, d.d_enc))
                .expect("contiguous")
                .sum_axis(Axis(0));
            self.enc_x.backward(&cache.x_cache, d3.view());
        } else {
            self.enc_x.backward(&cache.x_cache, d_e.view());
        }
        Ok(())
    }
}

impl Params for VidonBranch {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.enc_x.visit_params(f);
        self.enc_u.visit_params(f);
        for h in 0..self.score.len() {
            self.score[h].visit_params(f);
            self.value[h].visit_params(f);
        }
        self.out.visit_params(f);
    }
}
