//! Datasets and their integer spike encodings.

pub mod mnist;
pub mod shd;
pub mod synthetic;

use crate::error::{Error, Result};
use crate::network::derive_seed;
use crate::tensor::{BitWidth, IntTensor};

/// One batch ready for the network: `t_s` frames of `[B, inputs]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    pub frames: Vec<IntTensor>,
    pub labels: Vec<usize>,
}

impl EncodedBatch {
    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    /// Total input events (sum of all frame values).
    pub fn event_mass(&self) -> u64 {
        self.frames.iter().flat_map(|f| f.data()).map(|&x| x as u64).sum()
    }
}

/// A labelled dataset that can turn samples into spike frames.
pub trait SpikeDataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input elements per frame.
    fn inputs(&self) -> usize;

    fn classes(&self) -> usize;

    /// Largest value an encoded element can take.
    fn input_max(&self) -> u32;

    fn label(&self, idx: usize) -> usize;

    /// `[t_s × inputs]` frames of one sample, row-major.
    fn encode_sample(&self, idx: usize, timesteps: usize, seed: u64) -> Result<Vec<i32>>;

    /// Encode a batch. Each sample's generator is derived from `seed` and its
    /// dataset index, so a sample encodes identically whatever batch it is in.
    fn encode(&self, indices: &[usize], timesteps: usize, seed: u64) -> Result<EncodedBatch> {
        let inputs = self.inputs();
        let b = indices.len();
        let mut frames = vec![vec![0i32; b * inputs]; timesteps];
        let mut labels = Vec::with_capacity(b);
        for (bi, &idx) in indices.iter().enumerate() {
            if idx >= self.len() {
                return Err(Error::Dataset(format!("sample index {idx} out of range ({})", self.len())));
            }
            let enc = self.encode_sample(idx, timesteps, derive_seed(seed, &[idx as u64]))?;
            for (t, frame) in frames.iter_mut().enumerate() {
                frame[bi * inputs..(bi + 1) * inputs].copy_from_slice(&enc[t * inputs..(t + 1) * inputs]);
            }
            labels.push(self.label(idx));
        }
        let binary = self.input_max() <= 1;
        let frames = frames
            .into_iter()
            .map(|f| {
                if binary {
                    IntTensor::binary(&[b, inputs], f)
                } else {
                    IntTensor::from_vec(&[b, inputs], BitWidth::W16, f)
                }
            })
            .collect::<Result<_>>()?;
        Ok(EncodedBatch { frames, labels })
    }
}

/// Selected samples of another dataset, in the given order.
pub struct Subset<'a> {
    inner: &'a dyn SpikeDataset,
    indices: Vec<usize>,
}

impl<'a> Subset<'a> {
    pub fn new(inner: &'a dyn SpikeDataset, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= inner.len()) {
            return Err(Error::Dataset(format!("subset index {bad} out of range ({})", inner.len())));
        }
        Ok(Subset { inner, indices })
    }

    pub fn head(inner: &'a dyn SpikeDataset, len: usize) -> Self {
        Subset {
            inner,
            indices: (0..len.min(inner.len())).collect(),
        }
    }
}

impl SpikeDataset for Subset<'_> {
    fn len(&self) -> usize {
        self.indices.len()
    }

    fn inputs(&self) -> usize {
        self.inner.inputs()
    }

    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn input_max(&self) -> u32 {
        self.inner.input_max()
    }

    fn label(&self, idx: usize) -> usize {
        self.inner.label(self.indices[idx])
    }

    fn encode_sample(&self, idx: usize, timesteps: usize, seed: u64) -> Result<Vec<i32>> {
        self.inner.encode_sample(self.indices[idx], timesteps, seed)
    }
}
