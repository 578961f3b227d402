//! Datasets: seeded synthetic generators and IDX files.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A labelled classification dataset. `features` is `[N, ...sample_shape]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let n = features.shape().first().copied().unwrap_or(0);
        if n != labels.len() {
            return Err(Error::Dataset(format!("{n} samples but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Dataset(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.features.shape()[1..]
    }

    /// Gathers the given samples into a batch.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let len = self.features.row_len();
        let mut data = Vec::with_capacity(idx.len() * len);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(self.sample_shape());
        (
            Tensor::new(shape, data).expect("consistent batch"),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let (features, labels) = self.gather(idx);
        Self {
            features,
            labels,
            classes: self.classes,
        }
    }

    /// Rescales every feature column to `[0, 1]` using this dataset's range.
    pub fn normalize_unit(&mut self) {
        let len = self.features.row_len();
        let n = self.len();
        let data = self.features.data_mut();
        for f in 0..len {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..n {
                lo = lo.min(data[i * len + f]);
                hi = hi.max(data[i * len + f]);
            }
            let span = if hi > lo { hi - lo } else { 1.0 };
            for i in 0..n {
                data[i * len + f] = (data[i * len + f] - lo) / span;
            }
        }
    }
}

/// Two isotropic Gaussian blobs centred at `(-2, -2)` and `(2, 2)`.
pub fn blobs(n: usize, std: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).map_err(|e| Error::Dataset(e.to_string()))?;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let c = if label == 0 { -2.0 } else { 2.0 };
        data.push(c + noise.sample(&mut rng));
        data.push(c + noise.sample(&mut rng));
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, 2)
}

/// Two interleaved spirals of `turns` revolutions with Gaussian jitter.
pub fn two_spirals(n: usize, turns: f64, noise: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::Dataset(e.to_string()))?;
    let per_class = n.div_ceil(2);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let k = (i / 2) as f64 / per_class.max(1) as f64;
        let t = 0.25 * PI + k * turns * 2.0 * PI;
        let r = t / (0.25 * PI + turns * 2.0 * PI);
        let phase = if label == 0 { 0.0 } else { PI };
        data.push(r * (t + phase).cos() + jitter.sample(&mut rng));
        data.push(r * (t + phase).sin() + jitter.sample(&mut rng));
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, labels, 2)
}

/// A tensor decoded from an IDX file: dimensions plus values as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
    pub type_code: u8,
}

/// Parses an IDX byte buffer (big-endian magic `0x0000TTDD`, `u32` dims, raw values).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Dataset("not an IDX file (bad magic)".into()));
    }
    let type_code = bytes[2];
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Dataset("truncated IDX header".into()));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let width = match type_code {
        0x08 | 0x09 => 1,
        0x0B => 2,
        0x0C | 0x0D => 4,
        0x0E => 8,
        t => return Err(Error::Dataset(format!("unsupported IDX element type 0x{t:02x}"))),
    };
    let body = &bytes[header..];
    if body.len() != count * width {
        return Err(Error::Dataset(format!(
            "IDX body has {} bytes, dims {dims:?} need {}",
            body.len(),
            count * width
        )));
    }
    let data = body
        .chunks_exact(width)
        .map(|c| match type_code {
            0x08 => c[0] as f64,
            0x09 => c[0] as i8 as f64,
            0x0B => i16::from_be_bytes([c[0], c[1]]) as f64,
            0x0C => i32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            0x0D => f32::from_be_bytes(c.try_into().expect("4 bytes")) as f64,
            _ => f64::from_be_bytes(c.try_into().expect("8 bytes")),
        })
        .collect();
    Ok(IdxArray { dims, data, type_code })
}

/// Serializes unsigned-byte data as an IDX buffer.
pub fn write_idx_u8(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))
}

/// Loads an image/label IDX pair. Images are scaled to `[0, 1]` and given a
/// channel axis, so `[N, H, W]` becomes `[N, 1, H, W]`.
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = parse_idx(&read_file(images)?)?;
    let lab = parse_idx(&read_file(labels)?)?;
    idx_dataset(img, lab)
}

pub fn idx_dataset(img: IdxArray, lab: IdxArray) -> Result<Dataset> {
    if img.dims.is_empty() || lab.dims.len() != 1 {
        return Err(Error::Dataset("expected image tensor and 1-d label vector".into()));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Dataset(format!(
            "{} images but {} labels",
            img.dims[0], lab.dims[0]
        )));
    }
    let mut shape = img.dims.clone();
    if shape.len() == 3 {
        shape.insert(1, 1);
    }
    let scale = if img.type_code == 0x08 { 1.0 / 255.0 } else { 1.0 };
    let features = Tensor::new(shape, img.data.iter().map(|v| v * scale).collect())?;
    let labels: Vec<usize> = lab.data.iter().map(|&v| v as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, labels, classes)
}

fn default_noise() -> f64 {
    0.02
}

fn default_turns() -> f64 {
    1.5
}

fn default_std() -> f64 {
    0.5
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Blobs {
        n: usize,
        #[serde(default = "default_std")]
        std: f64,
        seed: u64,
    },
    Spirals {
        n: usize,
        #[serde(default = "default_turns")]
        turns: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
}

#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Loads a dataset and splits it deterministically.
///
/// Synthetic sets are normalized to `[0, 1]` (activation quantizers are
/// unsigned) and `test_fraction` of them is held out as the test set; `val_fraction`
/// of what remains is held out for validation.
pub fn load_dataset(spec: &DatasetSpec, val_fraction: f64, test_fraction: f64, seed: u64) -> Result<DataSplits> {
    if !(0.0..1.0).contains(&val_fraction) || !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config("split fractions must lie in [0, 1)".into()));
    }
    let (pool, test) = match spec {
        DatasetSpec::Blobs { n, std, seed } => {
            let mut d = blobs(*n, *std, *seed)?;
            d.normalize_unit();
            (d, None)
        }
        DatasetSpec::Spirals { n, turns, noise, seed } => {
            let mut d = two_spirals(*n, *turns, *noise, *seed)?;
            d.normalize_unit();
            (d, None)
        }
        DatasetSpec::Idx {
            images,
            labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx_pair(images, labels)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some(load_idx_pair(i, l)?),
                (None, None) => None,
                _ => return Err(Error::Config("test_images and test_labels go together".into())),
            };
            (train, test)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.shuffle(&mut rng);
    let (test, rest) = match test {
        Some(t) => (t, idx),
        None => {
            let k = (pool.len() as f64 * test_fraction).round() as usize;
            (pool.subset(&idx[..k]), idx[k..].to_vec())
        }
    };
    let k = (rest.len() as f64 * val_fraction).round() as usize;
    let val = pool.subset(&rest[..k]);
    let train = pool.subset(&rest[k..]);
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    Ok(DataSplits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(blobs(100, 0.5, 1).unwrap(), blobs(100, 0.5, 1).unwrap());
        assert_ne!(blobs(100, 0.5, 1).unwrap(), blobs(100, 0.5, 2).unwrap());
        assert_eq!(
            two_spirals(64, 1.5, 0.02, 9).unwrap(),
            two_spirals(64, 1.5, 0.02, 9).unwrap()
        );
    }

    #[test]
    fn idx_header_dims() {
        let bytes = write_idx_u8(&[10, 4, 4], &[7u8; 160]);
        assert_eq!(&bytes[..4], &[0x00, 0x00, 0x08, 0x03]);
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![10, 4, 4]);
        assert_eq!(a.data.len(), 160);
        assert_eq!(a.data[0], 7.0);
    }

    #[test]
    fn idx_rejects_truncation_and_bad_magic() {
        let mut bytes = write_idx_u8(&[2, 2], &[1, 2, 3, 4]);
        bytes.pop();
        assert!(parse_idx(&bytes).is_err());
        assert!(parse_idx(&[1, 0, 8, 1, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn idx_big_endian_wide_types() {
        let mut bytes = vec![0, 0, 0x0B, 1, 0, 0, 0, 2];
        bytes.extend_from_slice(&(-3i16).to_be_bytes());
        bytes.extend_from_slice(&(513i16).to_be_bytes());
        assert_eq!(parse_idx(&bytes).unwrap().data, vec![-3.0, 513.0]);
    }

    #[test]
    fn label_count_mismatch_is_an_error() {
        let img = parse_idx(&write_idx_u8(&[3, 2, 2], &[0; 12])).unwrap();
        let lab = parse_idx(&write_idx_u8(&[2], &[0, 1])).unwrap();
        assert!(matches!(idx_dataset(img, lab), Err(Error::Dataset(_))));
    }

    #[test]
    fn splits_partition_the_data() {
        let spec = DatasetSpec::Spirals {
            n: 200,
            turns: 1.0,
            noise: 0.0,
            seed: 3,
        };
        let s = load_dataset(&spec, 0.1, 0.2, 5).unwrap();
        assert_eq!(s.test.len(), 40);
        assert_eq!(s.val.len(), 16);
        assert_eq!(s.train.len(), 144);
        assert!(s.train.features.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
