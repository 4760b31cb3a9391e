//! Fixed random recurrence for the hidden layer.
//!
//! `v ← (v_prev ≫ β̂) + W_ff · s + W_rec · B16(v_prev)` where `B16` keeps the
//! top 16 bits of the stored voltage. `W_rec` is drawn once and never trained.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::cost::{OpCounter, OpKind};
use crate::error::{Error, Result};
use crate::neuron::{transpose, LifLayerState};
use crate::tensor::{BitWidth, IntTensor};
use crate::weights::{quantize_code, sample_uniform_init, MixedPrecisionLayerWeights};

/// Recurrent weights `[N, N]` plus a fingerprint taken at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecurrentWeights {
    w_rec: IntTensor,
    w_rec_t: Vec<i32>,
    fingerprint: u64,
}

fn fingerprint(t: &IntTensor) -> u64 {
    let mut h = DefaultHasher::new();
    t.shape().hash(&mut h);
    t.data().hash(&mut h);
    h.finish()
}

/// Real-valued recurrent init: uniform ±1/√N, scaled again by 1/√N.
pub fn sample_recurrent_init(neurons: usize, seed: u64) -> Vec<f64> {
    let scale = 1.0 / (neurons.max(1) as f64).sqrt();
    sample_uniform_init(neurons * neurons, neurons, seed)
        .into_iter()
        .map(|w| w * scale)
        .collect()
}

impl RecurrentWeights {
    pub fn new(w_rec: IntTensor) -> Result<Self> {
        let n = match w_rec.shape() {
            [a, b] if a == b => *a,
            other => return Err(Error::shape(other, &[], "recurrent weights must be square")),
        };
        let w_rec_t = transpose(w_rec.data(), n, n);
        let fingerprint = fingerprint(&w_rec);
        Ok(RecurrentWeights {
            w_rec,
            w_rec_t,
            fingerprint,
        })
    }

    /// Quantize real weights against the same global maximum as the
    /// trainable layers, at inference width.
    pub fn from_real(neurons: usize, real: &[f64], bits: BitWidth, global_max: f64) -> Result<Self> {
        if !(global_max > 0.0 && global_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("global_max must be positive, got {global_max}")));
        }
        let codes = real.iter().map(|&w| quantize_code(w, global_max, bits)).collect();
        Self::new(IntTensor::from_vec(&[neurons, neurons], bits, codes)?)
    }

    pub fn weights(&self) -> &IntTensor {
        &self.w_rec
    }

    pub fn neurons(&self) -> usize {
        self.w_rec.shape()[0]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// True when the matrix still matches the fingerprint taken at init.
    pub fn is_unchanged(&self) -> bool {
        fingerprint(&self.w_rec) == self.fingerprint
    }

    /// `W_rec · B16(v_prev)` per sample, before saturation.
    pub(crate) fn current(&self, v_prev: &IntTensor, counter: &mut OpCounter) -> Vec<i64> {
        let n = self.neurons();
        let batch = v_prev.len() / n;
        let low = b16(v_prev, counter);
        let mut out = vec![0i64; batch * n];
        for b in 0..batch {
            let acc = &mut out[b * n..(b + 1) * n];
            for (j, &x) in low.data()[b * n..(b + 1) * n].iter().enumerate() {
                if x == 0 {
                    continue;
                }
                let col = &self.w_rec_t[j * n..(j + 1) * n];
                for (a, &w) in acc.iter_mut().zip(col) {
                    *a += w as i64 * x as i64;
                }
            }
        }
        let macs = (batch * n * n) as u64;
        counter.record(OpKind::Mul, macs);
        counter.record(OpKind::Add, macs);
        out
    }
}

/// `sat16(v ≫ (voltage_bits − 16))`
pub fn b16(v: &IntTensor, counter: &mut OpCounter) -> IntTensor {
    let shift = v.width().bits().saturating_sub(16);
    let data = v.data().iter().map(|&x| BitWidth::W16.clamp((x >> shift) as i64)).collect();
    counter.record(OpKind::Shift, v.len() as u64);
    IntTensor::from_parts(v.shape().to_vec(), BitWidth::W16, false, data)
}

/// One recurrent LIF step without traces; returns the spikes.
pub fn recurrent_step(
    state: &mut LifLayerState,
    spikes_in: &IntTensor,
    w_ff: &MixedPrecisionLayerWeights,
    w_rec: &RecurrentWeights,
    counter: &mut OpCounter,
) -> Result<IntTensor> {
    if w_rec.neurons() != state.neurons() {
        return Err(Error::shape(
            w_rec.weights().shape(),
            &[state.neurons(), state.neurons()],
            "recurrent weights",
        ));
    }
    if w_ff.shape() != [state.neurons(), state.inputs()] {
        return Err(Error::shape(w_ff.shape(), &[state.neurons(), state.inputs()], "layer weights"));
    }
    let lp_t = transpose(w_ff.lp().data(), state.neurons(), state.inputs());
    let rec = w_rec.current(&state.v, counter);
    Ok(state.step_with(&lp_t, spikes_in, Some(&rec), false, counter)?.spikes)
}
