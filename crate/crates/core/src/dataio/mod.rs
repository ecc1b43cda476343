//! MNIST ingestion, deterministic batching, model files and metrics output.

mod idx;
mod metrics;
mod model_file;

pub use idx::{load_mnist, parse_idx_images, parse_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use metrics::{write_metrics, EpochMetrics, MetricsSummary, METRICS_COLUMNS};
pub use model_file::{load_model, model_file_size, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::b16::quantize;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Labelled images normalized to `[0, 1]` at a precision tag.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Per-sample shape, e.g. `[1, 28, 28]`.
    sample_shape: Vec<usize>,
    /// Row-major pixels on the tag's storage grid.
    pixels: Vec<f32>,
    labels: Vec<usize>,
    classes: usize,
    precision: Precision,
}

/// `byte / 255` at binary32, rounded to the tag's storage width.
pub fn normalize_pixel(byte: u8, precision: Precision) -> f32 {
    let v = byte as f32 / 255.0;
    if precision.stores_half() {
        quantize(v)
    } else {
        v
    }
}

impl Dataset {
    pub fn new(sample_shape: Vec<usize>, bytes: &[u8], labels: Vec<usize>, precision: Precision) -> Result<Dataset> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || bytes.len() % per != 0 {
            return Err(Error::contract(format!(
                "{} pixels do not split into samples of {sample_shape:?}",
                bytes.len()
            )));
        }
        let n = bytes.len() / per;
        if n != labels.len() {
            return Err(Error::CountMismatch { images: n, labels: labels.len() });
        }
        let classes = labels.iter().copied().max().map_or(0, |m| m + 1).max(10);
        let table: Vec<f32> = (0..=255u8).map(|b| normalize_pixel(b, precision)).collect();
        let pixels = bytes.iter().map(|&b| table[b as usize]).collect();
        Ok(Dataset { sample_shape, pixels, labels, classes, precision })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Same samples viewed with another per-sample shape (e.g. flattened).
    pub fn reshaped(mut self, sample_shape: &[usize]) -> Result<Dataset> {
        if sample_shape.iter().product::<usize>() != self.sample_shape.iter().product::<usize>() {
            return Err(Error::contract(format!("cannot view {:?} as {sample_shape:?}", self.sample_shape)));
        }
        self.sample_shape = sample_shape.to_vec();
        Ok(self)
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        let per = self.sample_size();
        Dataset {
            sample_shape: self.sample_shape.clone(),
            pixels: self.pixels[..n * per].to_vec(),
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            precision: self.precision,
        }
    }

    /// Re-tag, rounding pixels when narrowing.
    pub fn cast(&self, precision: Precision) -> Dataset {
        let mut d = self.clone();
        if precision.stores_half() {
            d.pixels.iter_mut().for_each(|v| *v = quantize(*v));
        }
        d.precision = precision;
        d
    }

    fn sample_size(&self) -> usize {
        self.sample_shape.iter().product()
    }

    /// Images `[N, ...sample]` for the given sample indices, plus their labels.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let per = self.sample_size();
        let mut buf = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::contract(format!("sample {i} out of range ({} samples)", self.len())));
            }
            buf.extend_from_slice(&self.pixels[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Ok((Tensor::from_f32(&shape, &buf, self.precision)?, labels))
    }

    /// All images as one tensor.
    pub fn images(&self) -> Result<Tensor> {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::from_f32(&shape, &self.pixels, self.precision)
    }
}

// Shuffle streams are disjoint from the per-layer initialization streams.
const SHUFFLE_STREAM: u64 = 1 << 63;

/// Mini-batches of sample indices for one epoch.
///
/// The order is a ChaCha8 shuffle keyed by `(seed, epoch)`; the final short
/// batch is kept.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM | epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Directory holding the four MNIST IDX files: `$P16_MNIST_DIR`, else the
/// first existing candidate.
pub fn find_mnist_dir(candidates: &[PathBuf]) -> Option<PathBuf> {
    let has_files =
        |d: &Path| d.join("train-images-idx3-ubyte").is_file() && d.join("t10k-labels-idx1-ubyte").is_file();
    if let Some(d) = std::env::var_os("P16_MNIST_DIR").map(PathBuf::from) {
        return has_files(&d).then_some(d);
    }
    candidates.iter().find(|d| has_files(d)).cloned()
}
