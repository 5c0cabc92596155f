//! On-disk dataset container.
//!
//! Layout: 8-byte magic, u32 format version, u64 JSON header length, the
//! JSON header (format/generator versions, benchmark card, array manifest
//! with shapes and per-array SHA-256, free-form metadata), the raw arrays
//! as little-endian f64 blobs in manifest order, and a SHA-256 trailer over
//! every preceding byte. A human-readable copy of the header is written
//! next to the file as `<name>.meta.json`.
//!
//! Shared-vs-per-sample location and query layouts are encoded purely by
//! rank: a 2-d blob is shared across samples, a 3-d blob is per sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BenchmarkCard, Locations, OperatorDataset, Queries, GENERATOR_VERSION};
use crate::error::{Result, SetONetError};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SETONET\0";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub generator_version: String,
    pub card: BenchmarkCard,
    pub n_samples: usize,
    pub arrays: Vec<ArrayEntry>,
    pub meta: serde_json::Value,
}

struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

struct HashingReader<R: Read> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

fn blob_sha256(data: &[f64]) -> String {
    let mut h = Sha256::new();
    for &v in data {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn write_blob(w: &mut impl Write, data: &[f64]) -> std::io::Result<()> {
    // Chunked conversion keeps the write path allocation-light for large
    // arrays.
    let mut buf = [0u8; 8 * 1024];
    for chunk in data.chunks(1024) {
        for (i, &v) in chunk.iter().enumerate() {
            buf[i * 8..i * 8 + 8].copy_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf[..chunk.len() * 8])?;
    }
    Ok(())
}

fn read_blob(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    let mut buf = [0u8; 8 * 1024];
    let mut remaining = len;
    while remaining > 0 {
        let take = remaining.min(1024);
        r.read_exact(&mut buf[..take * 8])?;
        for i in 0..take {
            out.push(f64::from_le_bytes(buf[i * 8..i * 8 + 8].try_into().unwrap()));
        }
        remaining -= take;
    }
    Ok(out)
}

fn manifest(ds: &OperatorDataset) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut arrays = Vec::new();
    let mut push = |name: &str, shape: Vec<usize>, data: Vec<f64>| {
        arrays.push((name.to_string(), shape, data));
    };
    match &ds.locations {
        Locations::Shared(a) => push("locations", a.shape().to_vec(), a.iter().copied().collect()),
        Locations::PerSample(a) => {
            push("locations", a.shape().to_vec(), a.iter().copied().collect())
        }
    }
    push("values", ds.values.shape().to_vec(), ds.values.iter().copied().collect());
    match &ds.queries {
        Queries::Shared(a) => push("queries", a.shape().to_vec(), a.iter().copied().collect()),
        Queries::PerSample(a) => push("queries", a.shape().to_vec(), a.iter().copied().collect()),
    }
    push("targets", ds.targets.shape().to_vec(), ds.targets.iter().copied().collect());
    if let Some(extra) = &ds.extra {
        push("extra", extra.shape().to_vec(), extra.iter().copied().collect());
    }
    if let Some(aux) = &ds.aux {
        push("aux", aux.shape().to_vec(), aux.iter().copied().collect());
    }
    arrays
}

/// Writes the dataset plus its human-readable `<path>.meta.json` sidecar.
pub fn write_dataset(ds: &OperatorDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let arrays = manifest(ds);
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        generator_version: GENERATOR_VERSION.to_string(),
        card: ds.card.clone(),
        n_samples: ds.len(),
        arrays: arrays
            .iter()
            .map(|(name, shape, data)| ArrayEntry {
                name: name.clone(),
                shape: shape.clone(),
                sha256: blob_sha256(data),
            })
            .collect(),
        meta: ds.meta.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| SetONetError::format(format!("header serialization failed: {e}")))?;

    let file = File::create(path)?;
    let mut w = HashingWriter { inner: BufWriter::new(file), hasher: Sha256::new() };
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())?;
    w.write_all(&header_json)?;
    for (_, _, data) in &arrays {
        write_blob(&mut w, data)?;
    }
    let digest = w.hasher.clone().finalize();
    w.inner.write_all(&digest)?;
    w.inner.flush()?;

    let sidecar = sidecar_path(path);
    let pretty = serde_json::to_vec_pretty(&header)
        .map_err(|e| SetONetError::format(format!("header serialization failed: {e}")))?;
    std::fs::write(sidecar, pretty)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_os_string();
    name.push(".meta.json");
    std::path::PathBuf::from(name)
}

pub fn read_dataset(path: &Path) -> Result<OperatorDataset> {
    let file = File::open(path)?;
    let mut r = HashingReader { inner: BufReader::new(file), hasher: Sha256::new() };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SetONetError::format("not a dataset file (bad magic)"));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(SetONetError::format(format!(
            "unsupported dataset format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let mut l = [0u8; 8];
    r.read_exact(&mut l)?;
    let json_len = u64::from_le_bytes(l) as usize;
    let mut header_json = vec![0u8; json_len];
    r.read_exact(&mut header_json)?;
    let header: DatasetHeader = serde_json::from_slice(&header_json)
        .map_err(|e| SetONetError::format(format!("malformed dataset header: {e}")))?;

    let mut blobs: Vec<(ArrayEntry, Vec<f64>)> = Vec::with_capacity(header.arrays.len());
    for entry in &header.arrays {
        let len: usize = entry.shape.iter().product();
        let data = read_blob(&mut r, len)?;
        let digest = blob_sha256(&data);
        if digest != entry.sha256 {
            return Err(SetONetError::format(format!(
                "array '{}' failed its checksum",
                entry.name
            )));
        }
        blobs.push((entry.clone(), data));
    }
    let computed = r.hasher.clone().finalize();
    let mut trailer = [0u8; 32];
    r.inner.read_exact(&mut trailer)?;
    if trailer[..] != computed[..] {
        return Err(SetONetError::format("dataset file failed its checksum"));
    }

    let take = |name: &str| -> Result<ArrayD<f64>> {
        let (entry, data) = blobs
            .iter()
            .find(|(e, _)| e.name == name)
            .ok_or_else(|| SetONetError::format(format!("dataset is missing array '{name}'")))?;
        ArrayD::from_shape_vec(IxDyn(&entry.shape), data.clone())
            .map_err(|e| SetONetError::format(format!("array '{name}' shape mismatch: {e}")))
    };
    let maybe = |name: &str| -> Result<Option<Array2<f64>>> {
        match blobs.iter().find(|(e, _)| e.name == name) {
            None => Ok(None),
            Some((entry, data)) => {
                if entry.shape.len() != 2 {
                    return Err(SetONetError::format(format!("array '{name}' must be 2-d")));
                }
                Ok(Some(
                    Array2::from_shape_vec((entry.shape[0], entry.shape[1]), data.clone())
                        .map_err(|e| {
                            SetONetError::format(format!("array '{name}' shape mismatch: {e}"))
                        })?,
                ))
            }
        }
    };

    let locations = match take("locations")? {
        a if a.ndim() == 2 => Locations::Shared(to_2d(a)?),
        a if a.ndim() == 3 => Locations::PerSample(to_3d(a)?),
        _ => return Err(SetONetError::format("locations must be 2-d or 3-d")),
    };
    let queries = match take("queries")? {
        a if a.ndim() == 2 => Queries::Shared(to_2d(a)?),
        a if a.ndim() == 3 => Queries::PerSample(to_3d(a)?),
        _ => return Err(SetONetError::format("queries must be 2-d or 3-d")),
    };
    let values = to_3d(take("values")?)?;
    let targets = to_3d(take("targets")?)?;

    let ds = OperatorDataset {
        card: header.card,
        locations,
        values,
        queries,
        targets,
        extra: maybe("extra")?,
        aux: maybe("aux")?,
        meta: header.meta,
    };
    ds.validate()?;
    Ok(ds)
}

fn to_2d(a: ArrayD<f64>) -> Result<Array2<f64>> {
    a.into_dimensionality::<ndarray::Ix2>()
        .map_err(|e| SetONetError::format(format!("expected a 2-d array: {e}")))
}

fn to_3d(a: ArrayD<f64>) -> Result<Array3<f64>> {
    a.into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| SetONetError::format(format!("expected a 3-d array: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BenchmarkId;
    use crate::data::{sample_rng, PolyStream};

    fn small_poly_dataset() -> OperatorDataset {
        let mut card = BenchmarkCard::for_benchmark(BenchmarkId::Derivative);
        card.m = 12;
        card.n_q = 17;
        let stream = PolyStream::with_card(card.clone(), 99).unwrap();
        let samples: Vec<_> = (0..5).map(|i| stream.sample_at(i).unwrap()).collect();
        let locations = stream.locations().clone();
        let queries = stream.queries().clone();
        OperatorDataset::from_samples(
            card,
            &samples,
            Some(locations),
            Some(queries),
            serde_json::json!({"master_seed": 99}),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.ds");
        let ds = small_poly_dataset();
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.values, ds.values);
        assert_eq!(back.targets, ds.targets);
        match (&back.locations, &ds.locations) {
            (Locations::Shared(a), Locations::Shared(b)) => assert_eq!(a, b),
            _ => panic!("locations layout changed in round trip"),
        }
        assert_eq!(back.meta["master_seed"], 99);
        let mut sidecar = path.as_os_str().to_os_string();
        sidecar.push(".meta.json");
        assert!(std::path::PathBuf::from(sidecar).exists());
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.ds");
        write_dataset(&small_poly_dataset(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Flip one bit deep inside the blob region.
        let idx = bytes.len() - 200;
        bytes[idx] ^= 0x10;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4, "{err}");
    }

    #[test]
    fn version_bump_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.ds");
        write_dataset(&small_poly_dataset(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 2;
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.ds");
        write_dataset(&small_poly_dataset(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn missing_array_is_a_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.ds");
        let ds = small_poly_dataset();
        write_dataset(&ds, &path).unwrap();
        // Rebuild the file without the 'targets' entry in the manifest.
        let file = std::fs::read(&path).unwrap();
        let json_len = u64::from_le_bytes(file[12..20].try_into().unwrap()) as usize;
        let mut header: DatasetHeader = serde_json::from_slice(&file[20..20 + json_len]).unwrap();
        let removed: usize = header
            .arrays
            .iter()
            .find(|e| e.name == "targets")
            .map(|e| e.shape.iter().product())
            .unwrap();
        header.arrays.retain(|e| e.name != "targets");
        let hj = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hj.len() as u64).to_le_bytes());
        out.extend_from_slice(&hj);
        // Blob order: locations, values, queries, targets(, ...). Skip the
        // targets bytes.
        let blob_start = 20 + json_len;
        let loc_len: usize = 12 * 1; // m x d_x
        let val_len: usize = 5 * 12 * 1;
        let q_len: usize = 17 * 1;
        let pre = (loc_len + val_len + q_len) * 8;
        out.extend_from_slice(&file[blob_start..blob_start + pre]);
        out.extend_from_slice(&file[blob_start + pre + removed * 8..file.len() - 32]);
        let mut h = Sha256::new();
        h.update(&out);
        let digest = h.finalize();
        out.extend_from_slice(&digest);
        std::fs::write(&path, &out).unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("targets"), "{err}");
    }

    #[test]
    fn sidecar_header_matches_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("poly.ds");
        write_dataset(&small_poly_dataset(), &path).unwrap();
        let mut sidecar = path.as_os_str().to_os_string();
        sidecar.push(".meta.json");
        let header: DatasetHeader =
            serde_json::from_slice(&std::fs::read(sidecar).unwrap()).unwrap();
        assert_eq!(header.format_version, FORMAT_VERSION);
        assert_eq!(header.n_samples, 5);
        assert_eq!(header.arrays.iter().filter(|e| e.name == "targets").count(), 1);
    }

    #[test]
    fn per_sample_layouts_round_trip() {
        let mut card = BenchmarkCard::for_benchmark(BenchmarkId::Heat);
        card.m = 3;
        card.n_q = 625;
        if let super::super::GenParams::Heat { .. } = card.gen {
        } else {
            panic!("heat card expected");
        }
        // Hand-build a tiny per-sample dataset without running the
        // generator.
        let n = 2;
        let mut rng = sample_rng(7, 0);
        let mut locations = Array3::zeros((n, 3, 2));
        let mut values = Array3::zeros((n, 3, 1));
        let mut queries = Array3::zeros((n, 625, 2));
        let mut targets = Array3::zeros((n, 625, 1));
        use rand::Rng;
        for v in locations.iter_mut().chain(queries.iter_mut()) {
            *v = rng.random_range(0.0..1.0);
        }
        for v in values.iter_mut().chain(targets.iter_mut()) {
            *v = rng.random_range(0.1..1.0);
        }
        let ds = OperatorDataset {
            card,
            locations: Locations::PerSample(locations),
            values,
            queries: Queries::PerSample(queries),
            targets,
            extra: None,
            aux: None,
            meta: serde_json::json!({}),
        };
        ds.validate().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heat.ds");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        match back.locations {
            Locations::PerSample(a) => assert_eq!(a.dim(), (2, 3, 2)),
            _ => panic!("per-sample locations collapsed"),
        }
        assert_eq!(back.targets, ds.targets);
    }
}
