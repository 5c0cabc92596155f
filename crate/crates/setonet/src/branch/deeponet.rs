//! Classical fixed-layout branch: the sensor values are flattened into one
//! vector in storage order and fed to a plain MLP. No locations, no weights,
//! no tolerance for a different sensor count than the one trained in.

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::error::{Result, SetONetError};
use crate::nn::{Mlp, MlpCache, ParamRef, Params};

use super::{BatchCoefficients, BranchCoefficients, BranchConfig, SensorBatch};
use crate::sensors::SensorSet;

pub struct DeepONetBranch {
    cfg: BranchConfig,
    net: Mlp,
    cache: Option<MlpCache>,
}

impl DeepONetBranch {
    pub fn new(cfg: &BranchConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut widths = vec![cfg.fixed_m * cfg.d_u];
        widths.extend_from_slice(&cfg.deeponet_hidden);
        widths.push(cfg.p * cfg.d_out);
        Ok(DeepONetBranch {
            cfg: cfg.clone(),
            net: Mlp::new(&widths, crate::nn::Activation::Relu, rng)?,
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
        let (b, m, d_u) = batch.values.dim();
        if m != self.cfg.fixed_m {
            return Err(SetONetError::validation(format!(
                "M differs from the trained-in sensor count: got {m}, expected {}",
                self.cfg.fixed_m
            )));
        }
        let flat = batch
            .values
            .to_shape((b, m * d_u))
            .expect("contiguous")
            .to_owned();
        let (out, cache) = self.net.forward_cached(flat.view());
        let coeffs = out
            .to_shape((b, self.cfg.p, self.cfg.d_out))
            .expect("contiguous")
            .to_owned();
        self.cache = Some(cache);
        // This variant has no bias path; the synthesis constant stays zero.
        Ok(BatchCoefficients { coeffs, bias: Array2::zeros((b, self.cfg.d_out)) })
    }

    pub fn backward_batch(&mut self, d_coeffs: &Array3<f64>, _d_bias: &Array2<f64>) -> Result<()> {
        let cache = self.cache.take().expect("forward_batch must run before backward_batch");
        let b = d_coeffs.dim().0;
        let d_flat = d_coeffs
            .to_shape((b, self.cfg.p * self.cfg.d_out))
            .expect("contiguous")
            .to_owned();
        self.net.backward(&cache, d_flat.view());
        Ok(())
    }
}

impl Params for DeepONetBranch {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamRef<'_>)) {
        self.net.visit_params(f);
    }
}
