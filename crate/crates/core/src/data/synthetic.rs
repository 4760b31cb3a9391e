//! Linearly separable toy stream for smoke tests and data-free runs.
//!
//! Inputs are split into one block per class. A sample of class `c` has
//! bright pixels in block `c` and dim ones elsewhere, then goes through the
//! same Bernoulli rate code as MNIST.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SpikeDataset;
use crate::error::Result;

const BRIGHT: (u8, u8) = (150, 255);
const DIM: (u8, u8) = (0, 40);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSet {
    inputs: usize,
    classes: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl SyntheticSet {
    pub fn new(len: usize, inputs: usize, classes: usize, seed: u64) -> Self {
        assert!(classes >= 1 && classes <= 255 && inputs >= classes, "need at least one input per class");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = inputs / classes;
        let mut pixels = Vec::with_capacity(len * inputs);
        let mut labels = Vec::with_capacity(len);
        for _ in 0..len {
            let c = rng.gen_range(0..classes);
            for i in 0..inputs {
                let (lo, hi) = if i / block == c { BRIGHT } else { DIM };
                pixels.push(rng.gen_range(lo..=hi));
            }
            labels.push(c as u8);
        }
        SyntheticSet {
            inputs,
            classes,
            pixels,
            labels,
        }
    }

    pub fn pixels(&self, idx: usize) -> &[u8] {
        &self.pixels[idx * self.inputs..(idx + 1) * self.inputs]
    }
}

impl SpikeDataset for SyntheticSet {
    fn len(&self) -> usize {
        self.labels.len()
    }

    fn inputs(&self) -> usize {
        self.inputs
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn input_max(&self) -> u32 {
        1
    }

    fn label(&self, idx: usize) -> usize {
        self.labels[idx] as usize
    }

    fn encode_sample(&self, idx: usize, timesteps: usize, seed: u64) -> Result<Vec<i32>> {
        Ok(super::mnist::rate_encode(self.pixels(idx), timesteps, seed).into_data())
    }
}
