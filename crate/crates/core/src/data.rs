//! Datasets: synthetic 2-D problems and the IDX binary format.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// Labelled samples; `x` is `[N, …]` with the per-sample shape trailing.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if x.ndim() < 2 || x.shape()[0] != labels.len() {
            return Err(LabError::Consistency(format!(
                "{} labels for samples of shape {:?}",
                labels.len(),
                x.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(LabError::Index { index: bad, len: classes });
        }
        Ok(Self { x, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.x.shape()[1..]
    }

    /// Gathers the samples at `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(LabError::Contract("empty batch".into()));
        }
        let per: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(LabError::Index { index: i, len: self.len() });
            }
            data.extend_from_slice(&self.x.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok((Tensor::new(shape, data)?, labels))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Blobs,
    Spirals,
}

/// Centre of blob `k` of `classes`: evenly spaced on a circle of radius 3.
pub fn blob_center(k: usize, classes: usize) -> [f64; 2] {
    let a = 2.0 * PI * k as f64 / classes as f64;
    [3.0 * a.cos(), 3.0 * a.sin()]
}

/// Two-dimensional synthetic classification data, samples grouped by class.
///
/// Spirals: for `u ~ U[0,1)`, `θ = 3π·√u` and arm `k` sits at
/// `θ·(cos(θ + 2πk/K), sin(θ + 2πk/K))`; Gaussian noise of std `noise` is
/// added and the result divided by π.
pub fn gen_synthetic(
    kind: SyntheticKind,
    classes: usize,
    n_per_class: usize,
    noise: f64,
    rng: &mut Rng,
) -> Result<Dataset> {
    if n_per_class == 0 || classes < 2 {
        return Err(LabError::Contract(format!(
            "synthetic data needs n_per_class >= 1 and classes >= 2 (got {n_per_class}, {classes})"
        )));
    }
    if !(noise >= 0.0) {
        return Err(LabError::Domain(format!("noise must be >= 0, got {noise}")));
    }
    let mut data = Vec::with_capacity(classes * n_per_class * 2);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for k in 0..classes {
        for _ in 0..n_per_class {
            let (x, y) = match kind {
                SyntheticKind::Blobs => {
                    let c = blob_center(k, classes);
                    (c[0] + noise * rng.normal(), c[1] + noise * rng.normal())
                }
                SyntheticKind::Spirals => {
                    let theta = rng.uniform().sqrt() * 3.0 * PI;
                    let a = theta + 2.0 * PI * k as f64 / classes as f64;
                    let x = theta * a.cos() + noise * rng.normal();
                    let y = theta * a.sin() + noise * rng.normal();
                    (x / PI, y / PI)
                }
            };
            data.push(x);
            data.push(y);
            labels.push(k);
        }
    }
    Dataset::new(Tensor::new(vec![labels.len(), 2], data)?, labels, classes)
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| LabError::Length {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(LabError::Format {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, count: usize, path: &Path) -> Result<&'a [u8]> {
    let expected = header + count;
    if bytes.len() != expected {
        return Err(LabError::Length {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(&bytes[header..])
}

/// Parses an IDX image file into `[N, 1, H, W]` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor> {
    check_magic(bytes, IDX_IMAGE_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    let h = read_u32(bytes, 8, path)? as usize;
    let w = read_u32(bytes, 12, path)? as usize;
    let px = payload(bytes, 16, n * h * w, path)?;
    if n == 0 || h == 0 || w == 0 {
        return Err(LabError::Consistency(format!("{}: empty image set", path.display())));
    }
    Tensor::new(vec![n, 1, h, w], px.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABEL_MAGIC, path)?;
    let n = read_u32(bytes, 4, path)? as usize;
    Ok(payload(bytes, 8, n, path)?.iter().map(|&b| b as usize).collect())
}

/// Loads an image/label IDX pair. The class count is `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let x = parse_idx_images(&fs::read(images_path)?, images_path)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?, labels_path)?;
    if labels.len() != x.shape()[0] {
        return Err(LabError::Consistency(format!(
            "{} images but {} labels",
            x.shape()[0],
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(x, labels, classes)
}

/// Encodes `[N, H, W]` bytes as an IDX image file.
pub fn encode_idx_images(n: usize, h: usize, w: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != n * h * w {
        return Err(LabError::dim("encode_idx_images", &[pixels.len()], &[n, h, w]));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGE_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
