//! Shadow / low-precision weight pairs.
//!
//! Gradients land on the high-precision shadow copy; the inference copy used
//! by forward and feedback passes is regenerated from it by an arithmetic
//! right shift of `shadow_bits - lp_bits`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{OpCounter, OpKind};
use crate::error::{Error, Result};
use crate::tensor::{BitWidth, IntTensor};

/// Learning-rate shift η̂, weight-decay shift ρ̂ and clip bound Δ_max.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateParams {
    pub eta_shift: u32,
    pub decay_shift: u32,
    pub clip: i32,
}

impl UpdateParams {
    pub fn validate(&self) -> Result<()> {
        if self.eta_shift >= 32 || self.decay_shift >= 32 {
            return Err(Error::InvalidParameter(format!(
                "shift amounts must be < 32 (eta {}, decay {})",
                self.eta_shift, self.decay_shift
            )));
        }
        if self.clip <= 0 {
            return Err(Error::InvalidParameter(format!("clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedPrecisionLayerWeights {
    shadow: IntTensor,
    lp: IntTensor,
    update: UpdateParams,
}

/// Real-valued starting weights, uniform in ±1/√fan_in.
///
/// Used only to seed the integer weights; the values never reach training.
pub fn sample_uniform_init(len: usize, fan_in: usize, seed: u64) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Uniform quantizer against a global maximum, rounding half away from zero.
///
/// `w = global_max` maps to the largest positive code of `bits`.
pub fn quantize_code(w: f64, global_max: f64, bits: BitWidth) -> i32 {
    let levels = bits.max_value() as f64;
    let code = (w * levels / global_max).round();
    code.clamp(bits.min_value() as f64, levels) as i32
}

/// Element-wise `max(-clip, min(delta, clip))`.
pub fn clip_gradient(delta: &IntTensor, clip: i32) -> IntTensor {
    assert!(clip > 0, "clip bound must be positive");
    let data = delta.data().iter().map(|&d| d.clamp(-clip, clip)).collect();
    IntTensor::from_parts(delta.shape().to_vec(), delta.width(), false, data)
}

impl MixedPrecisionLayerWeights {
    /// Wrap existing shadow weights and derive the inference copy.
    pub fn from_shadow(shadow: IntTensor, lp_bits: BitWidth, update: UpdateParams) -> Result<Self> {
        if shadow.width() < lp_bits {
            return Err(Error::InvalidParameter(format!(
                "shadow width {} narrower than inference width {}",
                shadow.width(),
                lp_bits
            )));
        }
        update.validate()?;
        let lp = IntTensor::zeros(shadow.shape(), lp_bits);
        let mut w = MixedPrecisionLayerWeights { shadow, lp, update };
        w.regenerate_lp();
        Ok(w)
    }

    /// Quantize a fresh uniform initialization against `global_max`.
    ///
    /// `global_max` must be the largest magnitude over every layer's real
    /// initial weights so that relative scale survives quantization.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        shape: &[usize],
        fan_in: usize,
        shadow_bits: BitWidth,
        lp_bits: BitWidth,
        seed: u64,
        global_max: f64,
        update: UpdateParams,
    ) -> Result<Self> {
        if !(global_max > 0.0 && global_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "global_max must be positive, got {global_max}"
            )));
        }
        let len = shape.iter().product();
        let real = sample_uniform_init(len, fan_in, seed);
        Self::from_real(shape, &real, shadow_bits, lp_bits, global_max, update)
    }

    pub fn from_real(
        shape: &[usize],
        real: &[f64],
        shadow_bits: BitWidth,
        lp_bits: BitWidth,
        global_max: f64,
        update: UpdateParams,
    ) -> Result<Self> {
        if !(global_max > 0.0 && global_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "global_max must be positive, got {global_max}"
            )));
        }
        let codes = real.iter().map(|&w| quantize_code(w, global_max, shadow_bits)).collect();
        let shadow = IntTensor::from_vec(shape, shadow_bits, codes)?;
        Self::from_shadow(shadow, lp_bits, update)
    }

    pub fn shadow(&self) -> &IntTensor {
        &self.shadow
    }

    pub fn lp(&self) -> &IntTensor {
        &self.lp
    }

    pub fn shape(&self) -> &[usize] {
        self.shadow.shape()
    }

    pub fn shadow_bits(&self) -> BitWidth {
        self.shadow.width()
    }

    pub fn lp_bits(&self) -> BitWidth {
        self.lp.width()
    }

    /// Requantization shift, `shadow_bits - lp_bits`.
    pub fn shift(&self) -> u32 {
        self.shadow.width().bits() - self.lp.width().bits()
    }

    pub fn update_params(&self) -> UpdateParams {
        self.update
    }

    pub fn set_update_params(&mut self, update: UpdateParams) -> Result<()> {
        update.validate()?;
        self.update = update;
        Ok(())
    }

    /// `shadow ← sat(shadow − (Δ ≫ η̂) − (shadow ≫ ρ̂))`, then requantize.
    ///
    /// Both shifted terms are read from the pre-update shadow value. `delta`
    /// is expected to be clipped already.
    pub fn apply_update(&mut self, delta: &IntTensor, counter: &mut OpCounter) -> Result<()> {
        if delta.shape() != self.shadow.shape() {
            return Err(Error::shape(delta.shape(), self.shadow.shape(), "weight update"));
        }
        let width = self.shadow.width();
        let eta = self.update.eta_shift;
        let rho = self.update.decay_shift;
        let mut clamped = 0u64;
        for (w, &d) in self.shadow.data_mut().iter_mut().zip(delta.data()) {
            let next = *w as i64 - (d >> eta) as i64 - (*w >> rho) as i64;
            if !width.contains(next) {
                clamped += 1;
            }
            *w = width.clamp(next);
        }
        let n = delta.len() as u64;
        counter.record(OpKind::Shift, 2 * n);
        counter.record(OpKind::Add, 2 * n);
        counter.record_saturations(clamped);
        self.requantize(counter);
        Ok(())
    }

    /// `lp = sat(shadow ≫ (shadow_bits − lp_bits), lp_bits)`
    pub fn requantize(&mut self, counter: &mut OpCounter) {
        self.regenerate_lp();
        counter.record(OpKind::Shift, self.shadow.len() as u64);
    }

    fn regenerate_lp(&mut self) {
        let shift = self.shift();
        let lpw = self.lp.width();
        for (l, &s) in self.lp.data_mut().iter_mut().zip(self.shadow.data()) {
            *l = lpw.clamp((s >> shift) as i64);
        }
    }

    /// Checks the shadow/inference relation; used by tests and on load.
    pub fn is_consistent(&self) -> bool {
        let shift = self.shift();
        let lpw = self.lp.width();
        let sw = self.shadow.width();
        self.shadow
            .data()
            .iter()
            .zip(self.lp.data())
            .all(|(&s, &l)| sw.contains(s as i64) && l == lpw.clamp((s >> shift) as i64))
    }
}
