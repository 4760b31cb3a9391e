//! MNIST in IDX format and rate encoding.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SpikeDataset;
use crate::error::{Error, Result};
use crate::tensor::IntTensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistSet {
    pub rows: usize,
    pub cols: usize,
    /// `len × rows × cols` pixels.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn header(bytes: &[u8], what: &'static str, magic: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            what,
            expected: need as u64,
            actual: bytes.len() as u64,
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            what,
            expected: magic,
            found,
        });
    }
    if bytes.len() < need {
        return Err(Error::Truncated {
            what,
            expected: need as u64,
            actual: bytes.len() as u64,
        });
    }
    let dims: Vec<usize> = (0..dims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect();
    let body = dims.iter().product::<usize>();
    if bytes.len() != need + body {
        return Err(Error::Truncated {
            what,
            expected: (need + body) as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(dims)
}

/// Parse an IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let d = header(bytes, "idx images", IMAGES_MAGIC, 3)?;
    Ok((d[0], d[1], d[2], bytes[16..].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    header(bytes, "idx labels", LABELS_MAGIC, 1)?;
    let labels = bytes[8..].to_vec();
    if let Some((sample, &l)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(Error::LabelRange {
            sample,
            label: l as u32,
            classes: 10,
        });
    }
    Ok(labels)
}

pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load an image/label file pair.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<MnistSet> {
    let (n, rows, cols, images) = parse_idx_images(&read(images_path)?)?;
    let labels = parse_idx_labels(&read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::DimMismatch {
            what: "mnist",
            detail: format!("{n} images but {} labels", labels.len()),
        });
    }
    Ok(MnistSet {
        rows,
        cols,
        images,
        labels,
    })
}

/// Paths of the standard uncompressed file names in `dir`.
pub fn split_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    if train {
        (dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS))
    } else {
        (dir.join(TEST_IMAGES), dir.join(TEST_LABELS))
    }
}

pub fn load_mnist_dir(dir: &Path, train: bool) -> Result<MnistSet> {
    let (i, l) = split_paths(dir, train);
    load_mnist(&i, &l)
}

/// Bernoulli rate code: each pixel spikes with probability `pixel / 255` at
/// every step. Returns binary `[t_s, pixels]`.
pub fn rate_encode(image: &[u8], timesteps: usize, seed: u64) -> IntTensor {
    let data = rate_encode_raw(image, timesteps, seed);
    IntTensor::binary(&[timesteps, image.len()], data).expect("0/1 by construction")
}

fn rate_encode_raw(image: &[u8], timesteps: usize, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(timesteps * image.len());
    for _ in 0..timesteps {
        for &p in image {
            let r: u8 = rng.gen_range(0..255);
            out.push((r < p) as i32);
        }
    }
    out
}

impl MnistSet {
    pub fn image(&self, idx: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.images[idx * n..(idx + 1) * n]
    }
}

impl SpikeDataset for MnistSet {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn inputs(&self) -> usize {
        self.rows * self.cols
    }

    fn classes(&self) -> usize {
        10
    }

    fn input_max(&self) -> u32 {
        1
    }

    fn label(&self, idx: usize) -> usize {
        self.labels[idx] as usize
    }

    fn encode_sample(&self, idx: usize, timesteps: usize, seed: u64) -> Result<Vec<i32>> {
        Ok(rate_encode_raw(self.image(idx), timesteps, seed))
    }
}
