//! Bit-exact loaders for the MNIST IDX and CIFAR-10/100 binary formats,
//! normalization, and deterministic shuffled batching.
//!
//! Pixels are scaled to [0,1] and normalized with the fixed per-dataset
//! statistics below, which keeps inputs near the spline grid's well-resolved
//! core. Images are stored normalized as f32 to halve resident memory;
//! batches materialize f64 tensors on demand.

use crate::error::{KanError, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;
pub const CIFAR10_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];
pub const CIFAR100_MEAN: [f64; 3] = [0.5071, 0.4865, 0.4409];
pub const CIFAR100_STD: [f64; 3] = [0.2673, 0.2564, 0.2762];

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
const CIFAR10_RECORD: usize = 3073;
const CIFAR100_RECORD: usize = 3074;
const PLANE: usize = 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Normalized pixel values, `[n_samples, channels, height, width]`
    /// row-major.
    pub images: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
    pub n_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// First `n` samples as a new dataset.
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.n_samples());
        Dataset {
            images: self.images[..n * self.sample_len()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// One sample as an f64 tensor `[1, C, H, W]`.
    pub fn sample(&self, idx: usize) -> Tensor {
        let len = self.sample_len();
        let data = self.images[idx * len..(idx + 1) * len]
            .iter()
            .map(|&v| v as f64)
            .collect();
        Tensor::from_vec(&[1, self.channels, self.height, self.width], data).unwrap()
    }

    /// Deterministic batching. With `shuffle`, the visit order is a
    /// Fisher-Yates permutation drawn from `seed` alone, so a (seed, epoch)
    /// pair passed by the caller fully determines every batch. The final
    /// partial batch is kept.
    pub fn batches(&self, batch_size: usize, seed: u64, shuffle: bool) -> Batches<'_> {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        let mut order: Vec<u32> = (0..self.n_samples() as u32).collect();
        if shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
        Batches {
            dataset: self,
            order,
            batch_size,
            pos: 0,
        }
    }
}

pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<u32>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Iterator for Batches<'a> {
    type Item = (Tensor, Vec<u8>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let ds = self.dataset;
        let len = ds.sample_len();
        let mut data = Vec::with_capacity(idx.len() * len);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let i = i as usize;
            data.extend(ds.images[i * len..(i + 1) * len].iter().map(|&v| v as f64));
            labels.push(ds.labels[i]);
        }
        let images =
            Tensor::from_vec(&[idx.len(), ds.channels, ds.height, ds.width], data).unwrap();
        Some((images, labels))
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| KanError::TruncatedFile(format!("{what}: header past end of file")))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Parses a pair of IDX files (big-endian magic, 32-bit dims, raw unsigned
/// bytes row-major), scales pixels to [0,1], and normalizes with the MNIST
/// statistics.
pub fn load_mnist(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(&image_path)?;
    let labels = fs::read(&label_path)?;
    load_mnist_bytes(&images, &labels)
}

pub fn load_mnist_bytes(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let magic = read_be_u32(image_bytes, 0, "idx images")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(KanError::BadMagic(format!(
            "idx image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_be_u32(image_bytes, 4, "idx images")? as usize;
    let rows = read_be_u32(image_bytes, 8, "idx images")? as usize;
    let cols = read_be_u32(image_bytes, 12, "idx images")? as usize;
    let pixel_bytes = &image_bytes[16..];
    if pixel_bytes.len() != count * rows * cols {
        return Err(KanError::TruncatedFile(format!(
            "idx images: {} pixel bytes for {count} x {rows} x {cols}",
            pixel_bytes.len()
        )));
    }

    let label_magic = read_be_u32(label_bytes, 0, "idx labels")?;
    if label_magic != IDX_LABEL_MAGIC {
        return Err(KanError::BadMagic(format!(
            "idx label magic {label_magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let label_count = read_be_u32(label_bytes, 4, "idx labels")? as usize;
    let label_data = &label_bytes[8..];
    if label_data.len() != label_count {
        return Err(KanError::TruncatedFile(format!(
            "idx labels: {} bytes for {label_count} labels",
            label_data.len()
        )));
    }
    if label_count != count {
        return Err(KanError::CountMismatch(format!(
            "{count} images vs {label_count} labels"
        )));
    }
    if let Some(&bad) = label_data.iter().find(|&&l| l > 9) {
        return Err(KanError::LabelOutOfRange(format!(
            "MNIST label {bad} outside 0..=9"
        )));
    }

    let images = pixel_bytes
        .iter()
        .map(|&px| (((px as f64 / 255.0) - MNIST_MEAN) / MNIST_STD) as f32)
        .collect();
    Ok(Dataset {
        images,
        channels: 1,
        height: rows,
        width: cols,
        labels: label_data.to_vec(),
        n_classes: 10,
        split: Split::Train,
    })
}

fn normalize_cifar_record(pixels: &[u8], mean: &[f64; 3], std: &[f64; 3], out: &mut Vec<f32>) {
    for ch in 0..3 {
        let plane = &pixels[ch * PLANE..(ch + 1) * PLANE];
        for &px in plane {
            out.push((((px as f64 / 255.0) - mean[ch]) / std[ch]) as f32);
        }
    }
}

/// Loads CIFAR-10 batch files: each record is 1 label byte followed by 3072
/// pixel bytes, channel-planar R,G,B, each plane row-major.
pub fn load_cifar10(batch_paths: &[impl AsRef<Path>]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = fs::read(path)?;
        parse_cifar10_bytes(&bytes, &mut images, &mut labels)?;
    }
    Ok(Dataset {
        images,
        channels: 3,
        height: 32,
        width: 32,
        labels,
        n_classes: 10,
        split: Split::Train,
    })
}

fn parse_cifar10_bytes(bytes: &[u8], images: &mut Vec<f32>, labels: &mut Vec<u8>) -> Result<()> {
    if bytes.is_empty() || bytes.len() % CIFAR10_RECORD != 0 {
        return Err(KanError::TruncatedFile(format!(
            "CIFAR-10 file of {} bytes is not a multiple of {CIFAR10_RECORD}",
            bytes.len()
        )));
    }
    for record in bytes.chunks_exact(CIFAR10_RECORD) {
        let label = record[0];
        if label > 9 {
            return Err(KanError::LabelOutOfRange(format!(
                "CIFAR-10 label {label} outside 0..=9"
            )));
        }
        labels.push(label);
        normalize_cifar_record(&record[1..], &CIFAR10_MEAN, &CIFAR10_STD, images);
    }
    Ok(())
}

/// Loads a CIFAR-100 file: each record is a coarse label byte, a fine label
/// byte, then 3072 pixel bytes in the same planar layout as CIFAR-10.
pub fn load_cifar100(path: impl AsRef<Path>, use_fine_labels: bool) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    load_cifar100_bytes(&bytes, use_fine_labels)
}

pub fn load_cifar100_bytes(bytes: &[u8], use_fine_labels: bool) -> Result<Dataset> {
    if bytes.is_empty() || bytes.len() % CIFAR100_RECORD != 0 {
        return Err(KanError::TruncatedFile(format!(
            "CIFAR-100 file of {} bytes is not a multiple of {CIFAR100_RECORD}",
            bytes.len()
        )));
    }
    let n_classes = if use_fine_labels { 100 } else { 20 };
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for record in bytes.chunks_exact(CIFAR100_RECORD) {
        let (coarse, fine) = (record[0], record[1]);
        if coarse > 19 {
            return Err(KanError::LabelOutOfRange(format!(
                "CIFAR-100 coarse label {coarse} outside 0..=19"
            )));
        }
        if fine > 99 {
            return Err(KanError::LabelOutOfRange(format!(
                "CIFAR-100 fine label {fine} outside 0..=99"
            )));
        }
        labels.push(if use_fine_labels { fine } else { coarse });
        normalize_cifar_record(&record[2..], &CIFAR100_MEAN, &CIFAR100_STD, &mut images);
    }
    Ok(Dataset {
        images,
        channels: 3,
        height: 32,
        width: 32,
        labels,
        n_classes,
        split: Split::Train,
    })
}

fn denormalize_pixel(v: f32, mean: f64, std: f64) -> u8 {
    ((v as f64 * std + mean) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Re-encodes a MNIST-normalized dataset as IDX bytes `(images, labels)`.
/// Inverse of [`load_mnist_bytes`]; used to verify loader round-trips.
pub fn encode_mnist(ds: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + ds.images.len());
    images.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    images.extend_from_slice(&(ds.n_samples() as u32).to_be_bytes());
    images.extend_from_slice(&(ds.height as u32).to_be_bytes());
    images.extend_from_slice(&(ds.width as u32).to_be_bytes());
    images.extend(
        ds.images
            .iter()
            .map(|&v| denormalize_pixel(v, MNIST_MEAN, MNIST_STD)),
    );
    let mut labels = Vec::with_capacity(8 + ds.labels.len());
    labels.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.n_samples() as u32).to_be_bytes());
    labels.extend_from_slice(&ds.labels);
    (images, labels)
}

/// Re-encodes a CIFAR-10-normalized dataset as one batch file.
pub fn encode_cifar10(ds: &Dataset) -> Vec<u8> {
    encode_cifar(ds, &CIFAR10_MEAN, &CIFAR10_STD, None)
}

/// Re-encodes a CIFAR-100-normalized dataset; `coarse` supplies the coarse
/// label byte per record (the loader keeps only one label set).
pub fn encode_cifar100(ds: &Dataset, coarse: &[u8]) -> Vec<u8> {
    encode_cifar(ds, &CIFAR100_MEAN, &CIFAR100_STD, Some(coarse))
}

fn encode_cifar(ds: &Dataset, mean: &[f64; 3], std: &[f64; 3], coarse: Option<&[u8]>) -> Vec<u8> {
    let mut out = Vec::new();
    let len = ds.sample_len();
    for (i, &label) in ds.labels.iter().enumerate() {
        if let Some(coarse) = coarse {
            out.push(coarse[i]);
        }
        out.push(label);
        let pixels = &ds.images[i * len..(i + 1) * len];
        for ch in 0..3 {
            for &v in &pixels[ch * PLANE..(ch + 1) * PLANE] {
                out.push(denormalize_pixel(v, mean[ch], std[ch]));
            }
        }
    }
    out
}
