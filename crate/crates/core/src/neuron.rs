//! Integer leaky integrate-and-fire layers with eligibility traces.
//!
//! Per timestep a fully-connected layer does:
//!
//! 1. `v ← (v ≫ β̂) + W_lp · s`
//! 2. `sg ← |v − v_th| < grad_win` (on the integrated, pre-reset voltage)
//! 3. `spike ← v ≥ v_th`, then soft reset `v ← v − v_th · spike`
//! 4. `t_pre ← (t_pre ≫ β̂) + s`
//! 5. `t_corr[b, n, i] += t_pre[b, i] · sg[b, n]`

use crate::cost::{OpCounter, OpKind};
use crate::error::{Error, Result};
use crate::tensor::{BitWidth, IntTensor};
use crate::weights::MixedPrecisionLayerWeights;

/// Presynaptic trace storage width.
pub const PRE_TRACE_WIDTH: BitWidth = BitWidth::W16;
/// Correlation trace storage width.
pub const CORR_TRACE_WIDTH: BitWidth = BitWidth::W32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LifParams {
    v_th: i32,
    grad_win: i32,
    beta_shift: u32,
}

impl LifParams {
    pub fn new(v_th: i32, grad_win: i32, beta_shift: u32) -> Result<Self> {
        if v_th <= 0 {
            return Err(Error::InvalidParameter(format!("v_th must be positive, got {v_th}")));
        }
        if grad_win <= 0 {
            return Err(Error::InvalidParameter(format!("grad_win must be positive, got {grad_win}")));
        }
        if beta_shift >= 32 {
            return Err(Error::InvalidParameter(format!("beta_shift {beta_shift} must be < 32")));
        }
        Ok(LifParams {
            v_th,
            grad_win,
            beta_shift,
        })
    }

    pub fn v_th(&self) -> i32 {
        self.v_th
    }

    pub fn grad_win(&self) -> i32 {
        self.grad_win
    }

    pub fn beta_shift(&self) -> u32 {
        self.beta_shift
    }
}

/// `⌊log₂(1/β)⌋` for a decay rate β ∈ (0, 1].
pub fn decay_shift(beta: f64) -> Result<u32> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("decay rate {beta} outside (0, 1]")));
    }
    // largest k with β·2^k ≤ 1; exact for powers of two
    let mut k = 0u32;
    while k < 31 && beta * ((1u64 << (k + 1)) as f64) <= 1.0 {
        k += 1;
    }
    Ok(k)
}

/// Element-wise `|v − v_th| < grad_win` as a binary tensor.
pub fn surrogate_grad(v: &IntTensor, params: &LifParams) -> IntTensor {
    let data = v
        .data()
        .iter()
        .map(|&x| ((x as i64 - params.v_th as i64).abs() < params.grad_win as i64) as i32)
        .collect();
    IntTensor::from_parts(v.shape().to_vec(), BitWidth::W2, true, data)
}

/// Output of one full layer step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerStep {
    pub spikes: IntTensor,
    pub surrogate: IntTensor,
}

fn dims2(t: &IntTensor, what: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        other => Err(Error::shape(other, &[0, 0], what)),
    }
}

/// Row-major transpose of an `[rows × cols]` slice.
pub(crate) fn transpose(data: &[i32], rows: usize, cols: usize) -> Vec<i32> {
    let mut out = vec![0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Forward current `W · s` for a batch, from a transposed `[inputs × neurons]`
/// weight copy. Zero inputs are skipped; counts cover the dense product.
pub(crate) fn dense_current(
    lp_t: &[i32],
    neurons: usize,
    input: &IntTensor,
    counter: &mut OpCounter,
) -> Result<Vec<i64>> {
    let (batch, inputs) = dims2(input, "layer input must be [batch, inputs]")?;
    if lp_t.len() != inputs * neurons {
        return Err(Error::shape(&[neurons, lp_t.len() / neurons.max(1)], input.shape(), "forward current"));
    }
    let mut cur = vec![0i64; batch * neurons];
    let s = input.data();
    for b in 0..batch {
        let out = &mut cur[b * neurons..(b + 1) * neurons];
        for (i, &x) in s[b * inputs..(b + 1) * inputs].iter().enumerate() {
            if x == 0 {
                continue;
            }
            let col = &lp_t[i * neurons..(i + 1) * neurons];
            if x == 1 {
                for (o, &w) in out.iter_mut().zip(col) {
                    *o += w as i64;
                }
            } else {
                let x = x as i64;
                for (o, &w) in out.iter_mut().zip(col) {
                    *o += w as i64 * x;
                }
            }
        }
    }
    let macs = (batch * neurons * inputs) as u64;
    counter.record(if input.is_binary() { OpKind::BMul } else { OpKind::Mul }, macs);
    counter.record(OpKind::Add, macs);
    Ok(cur)
}

/// `v ← sat((v ≫ β̂) + current)`
pub(crate) fn leak_and_add(v: &mut IntTensor, current: &[i64], beta_shift: u32, counter: &mut OpCounter) {
    debug_assert_eq!(v.len(), current.len());
    let width = v.width();
    let mut clamped = 0u64;
    for (x, &c) in v.data_mut().iter_mut().zip(current) {
        let next = (*x >> beta_shift) as i64 + c;
        if !width.contains(next) {
            clamped += 1;
        }
        *x = width.clamp(next);
    }
    let n = current.len() as u64;
    counter.record(OpKind::Shift, n);
    counter.record(OpKind::Add, n);
    counter.record_saturations(clamped);
}

/// Threshold and soft reset; returns the binary spike tensor.
pub(crate) fn fire_and_reset(v: &mut IntTensor, v_th: i32, counter: &mut OpCounter) -> IntTensor {
    let mut spikes = Vec::with_capacity(v.len());
    for x in v.data_mut().iter_mut() {
        let s = (*x >= v_th) as i32;
        *x -= v_th * s;
        spikes.push(s);
    }
    let n = spikes.len() as u64;
    counter.record(OpKind::BMul, n);
    counter.record(OpKind::Add, n);
    IntTensor::from_parts(v.shape().to_vec(), BitWidth::W2, true, spikes)
}

/// `t_pre ← sat((t_pre ≫ β̂) + s)`
pub(crate) fn advance_pre_trace(
    t_pre: &mut IntTensor,
    spikes_in: &[i32],
    beta_shift: u32,
    counter: &mut OpCounter,
) {
    debug_assert_eq!(t_pre.len(), spikes_in.len());
    debug_assert!(spikes_in.iter().all(|&s| s >= 0));
    let width = t_pre.width();
    for (p, &s) in t_pre.data_mut().iter_mut().zip(spikes_in) {
        *p = width.clamp((*p >> beta_shift) as i64 + s as i64);
    }
    let n = spikes_in.len() as u64;
    counter.record(OpKind::Shift, n);
    counter.record(OpKind::Add, n);
}

/// `trace[g, i] += pre[g / per_pre, i] * sg[g]` over rows of length `row`.
///
/// Shared by dense layers (rows are neurons, `per_pre` is the neuron count)
/// and by anything else whose correlation trace is a gated row copy.
pub(crate) fn gated_row_accumulate(trace: &mut [i32], rows_pre: &[i32], sg: &[i32], per_pre: usize, row: usize) {
    for (g, &gate) in sg.iter().enumerate() {
        if gate == 0 {
            continue;
        }
        let src = &rows_pre[(g / per_pre) * row..(g / per_pre + 1) * row];
        let dst = &mut trace[g * row..(g + 1) * row];
        for (d, &p) in dst.iter_mut().zip(src) {
            *d = d.saturating_add(p);
        }
    }
}

/// State of a fully-connected LIF layer for one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LifLayerState {
    /// `[batch, neurons]`
    pub v: IntTensor,
    /// `[batch, inputs]`
    pub t_pre: IntTensor,
    /// `[batch, neurons, inputs]`
    pub t_corr: IntTensor,
    pub params: LifParams,
}

impl LifLayerState {
    pub fn new(batch: usize, neurons: usize, inputs: usize, params: LifParams, voltage_width: BitWidth) -> Self {
        LifLayerState {
            v: IntTensor::zeros(&[batch, neurons], voltage_width),
            t_pre: IntTensor::zeros(&[batch, inputs], PRE_TRACE_WIDTH),
            t_corr: IntTensor::zeros(&[batch, neurons, inputs], CORR_TRACE_WIDTH),
            params,
        }
    }

    pub fn batch(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn neurons(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn inputs(&self) -> usize {
        self.t_pre.shape()[1]
    }

    pub fn reset_state(&mut self) {
        self.v.fill_zero();
        self.t_pre.fill_zero();
        self.t_corr.fill_zero();
    }

    fn check_input(&self, input: &IntTensor) -> Result<()> {
        if input.shape() != [self.batch(), self.inputs()] {
            return Err(Error::shape(input.shape(), &[self.batch(), self.inputs()], "layer input"));
        }
        Ok(())
    }

    fn check_weights(&self, w: &MixedPrecisionLayerWeights) -> Result<()> {
        if w.shape() != [self.neurons(), self.inputs()] {
            return Err(Error::shape(w.shape(), &[self.neurons(), self.inputs()], "layer weights"));
        }
        Ok(())
    }

    /// `v ← (v ≫ β̂) + W_lp · s` without thresholding.
    pub fn integrate(
        &mut self,
        input: &IntTensor,
        w: &MixedPrecisionLayerWeights,
        counter: &mut OpCounter,
    ) -> Result<()> {
        self.check_input(input)?;
        self.check_weights(w)?;
        let lp_t = transpose(w.lp().data(), self.neurons(), self.inputs());
        self.integrate_with(&lp_t, input, counter)
    }

    pub(crate) fn integrate_with(&mut self, lp_t: &[i32], input: &IntTensor, counter: &mut OpCounter) -> Result<()> {
        let current = dense_current(lp_t, self.neurons(), input, counter)?;
        leak_and_add(&mut self.v, &current, self.params.beta_shift, counter);
        Ok(())
    }

    /// Threshold the current voltage and apply the soft reset.
    pub fn fire(&mut self, counter: &mut OpCounter) -> IntTensor {
        fire_and_reset(&mut self.v, self.params.v_th, counter)
    }

    /// Voltage update, threshold and reset; returns the binary spikes.
    pub fn lif_step(
        &mut self,
        input: &IntTensor,
        w: &MixedPrecisionLayerWeights,
        counter: &mut OpCounter,
    ) -> Result<IntTensor> {
        self.integrate(input, w, counter)?;
        Ok(self.fire(counter))
    }

    pub fn update_pre_trace(&mut self, spikes_in: &IntTensor, counter: &mut OpCounter) -> Result<()> {
        self.check_input(spikes_in)?;
        advance_pre_trace(&mut self.t_pre, spikes_in.data(), self.params.beta_shift, counter);
        Ok(())
    }

    pub fn update_corr_trace(&mut self, sg: &IntTensor, counter: &mut OpCounter) -> Result<()> {
        if sg.shape() != self.v.shape() {
            return Err(Error::shape(sg.shape(), self.v.shape(), "surrogate gradient"));
        }
        let (neurons, inputs) = (self.neurons(), self.inputs());
        gated_row_accumulate(self.t_corr.data_mut(), self.t_pre.data(), sg.data(), neurons, inputs);
        let n = self.t_corr.len() as u64;
        counter.record(OpKind::BMul, n);
        counter.record(OpKind::Add, n);
        Ok(())
    }

    /// One complete timestep including both traces.
    pub fn step(
        &mut self,
        input: &IntTensor,
        w: &MixedPrecisionLayerWeights,
        counter: &mut OpCounter,
    ) -> Result<LayerStep> {
        self.check_input(input)?;
        self.check_weights(w)?;
        let lp_t = transpose(w.lp().data(), self.neurons(), self.inputs());
        self.step_with(&lp_t, input, None, true, counter)
    }

    /// Step with a cached transposed weight copy and optional extra current.
    pub(crate) fn step_with(
        &mut self,
        lp_t: &[i32],
        input: &IntTensor,
        extra_current: Option<&[i64]>,
        learn: bool,
        counter: &mut OpCounter,
    ) -> Result<LayerStep> {
        let mut current = dense_current(lp_t, self.neurons(), input, counter)?;
        if let Some(extra) = extra_current {
            for (c, &e) in current.iter_mut().zip(extra) {
                *c += e;
            }
            counter.record(OpKind::Add, extra.len() as u64);
        }
        leak_and_add(&mut self.v, &current, self.params.beta_shift, counter);
        let surrogate = surrogate_grad(&self.v, &self.params);
        let spikes = self.fire(counter);
        if learn {
            self.update_pre_trace(input, counter)?;
            self.update_corr_trace(&surrogate, counter)?;
        }
        Ok(LayerStep { spikes, surrogate })
    }
}
