//! Fourier-feature positional encoding of sensor and query coordinates.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SetONetError};

/// Sinusoidal embedding configuration.
///
/// Each coordinate gets `embed_dim / (2 * coordinate_dim)` frequencies on a
/// geometric ladder from 1 up to `1 / max_scale`; sin/cos pairs per frequency
/// concatenate across coordinates to exactly `embed_dim` channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncodingConfig {
    pub embed_dim: usize,
    pub max_scale: f64,
    pub coordinate_dim: usize,
}

impl PositionalEncodingConfig {
    pub fn new(embed_dim: usize, max_scale: f64, coordinate_dim: usize) -> Result<Self> {
        let cfg = PositionalEncodingConfig {
            embed_dim,
            max_scale,
            coordinate_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coordinate_dim == 0 {
            return Err(SetONetError::validation("coordinate_dim must be positive"));
        }
        if self.embed_dim == 0 || self.embed_dim % (2 * self.coordinate_dim) != 0 {
            return Err(SetONetError::validation(format!(
                "embed_dim {} must be divisible by 2*coordinate_dim = {}",
                self.embed_dim,
                2 * self.coordinate_dim
            )));
        }
        if !(self.max_scale > 0.0) {
            return Err(SetONetError::validation("max_scale must be positive"));
        }
        Ok(())
    }

    /// Frequencies per coordinate.
    pub fn freqs_per_coord(&self) -> usize {
        self.embed_dim / (2 * self.coordinate_dim)
    }

    /// The geometric frequency ladder, lowest first.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.freqs_per_coord();
        let top = 1.0 / self.max_scale;
        (0..n)
            .map(|j| {
                if n == 1 {
                    1.0
                } else {
                    top.powf(j as f64 / (n - 1) as f64)
                }
            })
            .collect()
    }
}

/// Embeds `locations` (M x d_x) to (M x embed_dim).
///
/// Channel layout: for coordinate c and ladder index j, channels
/// `2*(c*F + j)` and `2*(c*F + j) + 1` hold sin and cos of `f_j * x_c`.
pub fn encode_positions(
    locations: ArrayView2<'_, f64>,
    cfg: &PositionalEncodingConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    if locations.ncols() != cfg.coordinate_dim {
        return Err(SetONetError::validation(format!(
            "locations have {} coordinates, config expects {}",
            locations.ncols(),
            cfg.coordinate_dim
        )));
    }
    let freqs = cfg.frequencies();
    let f_per = freqs.len();
    let m = locations.nrows();
    let mut out = Array2::zeros((m, cfg.embed_dim));
    for i in 0..m {
        for c in 0..cfg.coordinate_dim {
            let x = locations[[i, c]];
            for (j, &f) in freqs.iter().enumerate() {
                let base = 2 * (c * f_per + j);
                let (s, co) = (f * x).sin_cos();
                out[[i, base]] = s;
                out[[i, base + 1]] = co;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn origin_embeds_to_alternating_zero_one() {
        let cfg = PositionalEncodingConfig::new(64, 0.1, 1).unwrap();
        let e = encode_positions(array![[0.0]].view(), &cfg).unwrap();
        for j in 0..32 {
            assert_eq!(e[[0, 2 * j]], 0.0, "sin channel {j}");
            assert_eq!(e[[0, 2 * j + 1]], 1.0, "cos channel {j}");
        }
    }

    #[test]
    fn output_width_is_embed_dim() {
        let cfg = PositionalEncodingConfig::new(64, 0.1, 1).unwrap();
        let e = encode_positions(array![[0.3], [0.7]].view(), &cfg).unwrap();
        assert_eq!(e.shape(), &[2, 64]);

        let cfg2 = PositionalEncodingConfig::new(64, 0.01, 2).unwrap();
        let e2 = encode_positions(array![[0.3, -0.2]].view(), &cfg2).unwrap();
        assert_eq!(e2.shape(), &[1, 64]);
    }

    /// Independent reimplementation of the ladder at a pinned input.
    ///
    /// For x = 0.5, max_scale = 0.1, d_x = 1, d_PE = 64: the lowest rung is
    /// frequency 1, so the first pair is (sin 0.5, cos 0.5); the ladder is
    /// 10^(j/31), so rung j=31 is frequency 10 exactly.
    #[test]
    fn ladder_values_match_direct_formula() {
        let cfg = PositionalEncodingConfig::new(64, 0.1, 1).unwrap();
        let e = encode_positions(array![[0.5]].view(), &cfg).unwrap();
        assert!((e[[0, 0]] - 0.479425538604203).abs() < 1e-15);
        assert!((e[[0, 1]] - 0.877582561890373).abs() < 1e-15);
        // highest rung: frequency exactly 1/max_scale
        let f_top = 10.0f64;
        assert!((e[[0, 62]] - (f_top * 0.5).sin()).abs() < 1e-15);
        assert!((e[[0, 63]] - (f_top * 0.5).cos()).abs() < 1e-15);
        // an interior rung computed through the explicit power formula
        let f17 = 10.0f64.powf(17.0 / 31.0);
        assert!((e[[0, 34]] - (f17 * 0.5).sin()).abs() < 1e-15);
    }

    #[test]
    fn rejects_indivisible_embed_dim() {
        assert!(PositionalEncodingConfig::new(66, 0.1, 2).is_err());
        assert!(PositionalEncodingConfig::new(0, 0.1, 1).is_err());
    }

    #[test]
    fn two_dimensional_layout_blocks_by_coordinate() {
        let cfg = PositionalEncodingConfig::new(8, 0.1, 2).unwrap();
        // F = 2 per coordinate; coordinate 1 starts at channel 4
        let e = encode_positions(array![[0.0, 0.4]].view(), &cfg).unwrap();
        assert_eq!(e[[0, 0]], 0.0);
        assert_eq!(e[[0, 1]], 1.0);
        assert!((e[[0, 4]] - 0.4f64.sin()).abs() < 1e-15);
        assert!((e[[0, 5]] - 0.4f64.cos()).abs() < 1e-15);
    }
}
