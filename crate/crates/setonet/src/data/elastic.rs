//! Loader for the externally generated plate-with-hole dataset.
//!
//! The raw file is a standard dataset container holding every sample (edge
//! load profiles as sensor values, mesh-node displacements as targets) plus
//! a `split_sizes` metadata key. Loading splits it, then standardizes
//! sensor values and targets to zero mean and unit variance using
//! statistics of the training split only; the statistics are recorded in
//! both splits' metadata so predictions can be mapped back.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_dataset, OperatorDataset};
use crate::config::BenchmarkId;
use crate::error::{Result, SetONetError};

/// Scalar affine normalization x -> (x - mean) / std.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    /// Population statistics of a value stream.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Result<Self> {
        let mut n = 0usize;
        let mut mean = 0.0;
        for v in values.clone() {
            if !v.is_finite() {
                return Err(SetONetError::numerical("nonfinite value while fitting stats"));
            }
            n += 1;
            mean += v;
        }
        if n == 0 {
            return Err(SetONetError::validation("cannot fit statistics of nothing"));
        }
        mean /= n as f64;
        let var: f64 = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if std < 1e-12 {
            return Err(SetONetError::numerical("degenerate (constant) data has no scale"));
        }
        Ok(Standardization { mean, std })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Train and test splits, already standardized by train statistics.
#[derive(Debug)]
pub struct ElasticSplits {
    pub train: OperatorDataset,
    pub test: OperatorDataset,
    pub value_stats: Standardization,
    pub target_stats: Standardization,
}

/// Loads the raw container, splits by the recorded `split_sizes`, and
/// standardizes both splits with train statistics.
pub fn load_elastic_dataset(path: &Path) -> Result<ElasticSplits> {
    let ds = read_dataset(path)?;
    if ds.card.bench != BenchmarkId::Elastic {
        return Err(SetONetError::validation(format!(
            "expected a plate dataset, file holds {}",
            ds.card.bench.name()
        )));
    }
    let sizes = ds
        .meta
        .get("split_sizes")
        .ok_or_else(|| SetONetError::format("dataset metadata is missing 'split_sizes'"))?;
    let n_train = sizes
        .get("train")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| SetONetError::format("split_sizes is missing 'train'"))?
        as usize;
    let n_test = sizes
        .get("test")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| SetONetError::format("split_sizes is missing 'test'"))?
        as usize;
    if n_train == 0 || n_test == 0 {
        return Err(SetONetError::validation("both splits must be nonempty"));
    }
    if n_train + n_test != ds.len() {
        return Err(SetONetError::validation(format!(
            "split sizes {n_train}+{n_test} do not cover the {} stored samples",
            ds.len()
        )));
    }

    let value_stats =
        Standardization::fit(ds.values.slice(ndarray::s![..n_train, .., ..]).iter().copied())?;
    let target_stats =
        Standardization::fit(ds.targets.slice(ndarray::s![..n_train, .., ..]).iter().copied())?;

    let train = split_slice(&ds, 0, n_train, "train", value_stats, target_stats)?;
    let test = split_slice(&ds, n_train, n_test, "test", value_stats, target_stats)?;
    Ok(ElasticSplits { train, test, value_stats, target_stats })
}

fn split_slice(
    ds: &OperatorDataset,
    start: usize,
    len: usize,
    name: &str,
    value_stats: Standardization,
    target_stats: Standardization,
) -> Result<OperatorDataset> {
    use super::{Locations, Queries};
    use ndarray::s;
    let range = s![start..start + len, .., ..];
    let mut values = ds.values.slice(range).to_owned();
    let mut targets = ds.targets.slice(range).to_owned();
    values.mapv_inplace(|v| value_stats.apply(v));
    targets.mapv_inplace(|v| target_stats.apply(v));
    let locations = match &ds.locations {
        Locations::Shared(l) => Locations::Shared(l.clone()),
        Locations::PerSample(l) => Locations::PerSample(l.slice(range).to_owned()),
    };
    let queries = match &ds.queries {
        Queries::Shared(q) => Queries::Shared(q.clone()),
        Queries::PerSample(q) => Queries::PerSample(q.slice(range).to_owned()),
    };
    let extra = ds.extra.as_ref().map(|e| e.slice(s![start..start + len, ..]).to_owned());
    let aux = ds.aux.as_ref().map(|a| a.slice(s![start..start + len, ..]).to_owned());
    let mut meta = ds.meta.clone();
    if let serde_json::Value::Object(map) = &mut meta {
        map.insert("split".into(), serde_json::json!(name));
        map.insert(
            "standardization".into(),
            serde_json::json!({
                "values": value_stats,
                "targets": target_stats,
            }),
        );
    }
    let out = OperatorDataset {
        card: ds.card.clone(),
        locations,
        values,
        queries,
        targets,
        extra,
        aux,
        meta,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_rng, write_dataset, BenchmarkCard, Locations, Queries};
    use ndarray::{Array2, Array3};
    use rand::Rng;

    /// Synthetic raw container shaped like the real export: edge loads on
    /// x = 1, displacement targets on interior nodes.
    fn synthetic_raw(n_train: usize, n_test: usize, with_sizes: bool) -> OperatorDataset {
        let card = BenchmarkCard::for_benchmark(BenchmarkId::Elastic);
        let n = n_train + n_test;
        let mut rng = sample_rng(5150, 0);
        let mut locations = Array2::zeros((card.m, 2));
        for i in 0..card.m {
            locations[[i, 0]] = 1.0;
            locations[[i, 1]] = i as f64 / (card.m - 1) as f64;
        }
        let mut queries = Array2::zeros((card.n_q, 2));
        for v in queries.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let mut values = Array3::zeros((n, card.m, 1));
        for v in values.iter_mut() {
            *v = 40.0 + 12.0 * rng.random_range(-1.0..1.0f64);
        }
        let mut targets = Array3::zeros((n, card.n_q, 1));
        for v in targets.iter_mut() {
            *v = -3e-3 + 1e-3 * rng.random_range(-1.0..1.0f64);
        }
        let meta = if with_sizes {
            serde_json::json!({"split_sizes": {"train": n_train, "test": n_test}})
        } else {
            serde_json::json!({})
        };
        OperatorDataset {
            card,
            locations: Locations::Shared(locations),
            values,
            queries: Queries::Shared(queries),
            targets,
            extra: None,
            aux: None,
            meta,
        }
    }

    #[test]
    fn train_split_is_standardized_and_invertible() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plate.ds");
        let raw = synthetic_raw(30, 10, true);
        let raw_values = raw.values.clone();
        write_dataset(&raw, &path).unwrap();
        let splits = load_elastic_dataset(&path).unwrap();
        assert_eq!(splits.train.len(), 30);
        assert_eq!(splits.test.len(), 10);

        let n = splits.train.values.len() as f64;
        let mean: f64 = splits.train.values.iter().sum::<f64>() / n;
        let var: f64 = splits.train.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6, "standardized mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "standardized std {}", var.sqrt());
        let tmean: f64 = splits.train.targets.iter().sum::<f64>()
            / splits.train.targets.len() as f64;
        assert!(tmean.abs() < 1e-6);

        // Inverting recovers the raw numbers.
        for (z, raw) in splits.train.values.iter().zip(raw_values.iter()) {
            assert!((splits.value_stats.invert(*z) - raw).abs() < 1e-10);
        }
        assert_eq!(splits.train.meta["split"], "train");
        assert_eq!(
            splits.test.meta["standardization"]["values"]["mean"],
            serde_json::json!(splits.value_stats.mean)
        );
    }

    #[test]
    fn test_split_uses_train_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plate.ds");
        write_dataset(&synthetic_raw(25, 15, true), &path).unwrap();
        let splits = load_elastic_dataset(&path).unwrap();
        // Test-split mean under train statistics is near but not exactly
        // zero; exact zero would mean the loader leaked test data into the
        // fit.
        let n = splits.test.values.len() as f64;
        let mean: f64 = splits.test.values.iter().sum::<f64>() / n;
        assert!(mean.abs() > 1e-9, "test split suspiciously centered: {mean}");
        assert!(mean.abs() < 0.5);
    }

    #[test]
    fn missing_split_sizes_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plate.ds");
        write_dataset(&synthetic_raw(6, 2, false), &path).unwrap();
        let err = load_elastic_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("split_sizes"));
    }

    #[test]
    fn split_sizes_must_cover_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plate.ds");
        let mut raw = synthetic_raw(6, 2, true);
        raw.meta = serde_json::json!({"split_sizes": {"train": 6, "test": 3}});
        write_dataset(&raw, &path).unwrap();
        let err = load_elastic_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn constant_data_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plate.ds");
        let mut raw = synthetic_raw(6, 2, true);
        raw.values.fill(40.0);
        write_dataset(&raw, &path).unwrap();
        let err = load_elastic_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
