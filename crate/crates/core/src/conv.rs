//! Strided convolutional LIF layer.
//!
//! The correlation trace keeps one `Ch_in × k × k` slab per output neuron,
//! i.e. `[B, Ch_out, H′, W′, Ch_in, k, k]`. It grows by the unfolded
//! presynaptic trace wherever the surrogate gradient is active. The kernel
//! gradient sums feedback × trace over batch and output positions.

use serde::{Deserialize, Serialize};

use crate::cost::{OpCounter, OpKind};
use crate::error::{Error, Result};
use crate::neuron::{
    advance_pre_trace, fire_and_reset, leak_and_add, surrogate_grad, LayerStep, LifParams, CORR_TRACE_WIDTH,
    PRE_TRACE_WIDTH,
};
use crate::tensor::{matmul_counted, BitWidth, IntTensor};
use crate::weights::MixedPrecisionLayerWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Geometry(format!("degenerate spec {self:?}")));
        }
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::Geometry(format!(
                "input {h}x{w} (padding {}) smaller than kernel {}",
                self.padding, self.kernel
            )));
        }
        Ok(((hp - self.kernel) / self.stride + 1, (wp - self.kernel) / self.stride + 1))
    }

    /// Elements of one kernel slab, `Ch_in × k × k`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    fn input_dims(&self, t: &IntTensor) -> Result<(usize, usize, usize)> {
        match t.shape() {
            [b, c, h, w] if *c == self.in_channels => Ok((*b, *h, *w)),
            other => Err(Error::Geometry(format!(
                "expected [B, {}, H, W] input, got {other:?}",
                self.in_channels
            ))),
        }
    }
}

/// im2col of a flat `[B, Ch_in, H, W]` buffer into `[B, H′, W′, Ch_in, k, k]`.
/// Out-of-bounds (padding) positions read as zero.
pub(crate) fn unfold_raw(
    data: &[i32],
    batch: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
    spec: &ConvSpec,
) -> Vec<i32> {
    let (c, k, s, p) = (spec.in_channels, spec.kernel, spec.stride, spec.padding as isize);
    let q = spec.patch_len();
    let mut out = vec![0i32; batch * oh * ow * q];
    for b in 0..batch {
        let img = &data[b * c * h * w..(b + 1) * c * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let dst = &mut out[((b * oh + y) * ow + x) * q..][..q];
                let mut idx = 0;
                for ci in 0..c {
                    for u in 0..k {
                        let iy = (y * s + u) as isize - p;
                        for v in 0..k {
                            let ix = (x * s + v) as isize - p;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                dst[idx] = img[(ci * h + iy as usize) * w + ix as usize];
                            }
                            idx += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Extract, for every output position, the input patch the kernel reads.
///
/// Pure data movement; no operations are counted.
pub fn unfold(t: &IntTensor, spec: &ConvSpec) -> Result<IntTensor> {
    let (b, h, w) = spec.input_dims(t)?;
    let (oh, ow) = spec.output_dims(h, w)?;
    let data = unfold_raw(t.data(), b, (h, w), (oh, ow), spec);
    Ok(IntTensor::from_parts(
        vec![b, oh, ow, spec.in_channels, spec.kernel, spec.kernel],
        t.width(),
        t.is_binary(),
        data,
    ))
}

/// Kernel weights as a `[patch, Ch_out]` matrix.
pub(crate) fn kernel_columns(lp: &[i32], spec: &ConvSpec) -> Vec<i32> {
    crate::neuron::transpose(lp, spec.out_channels, spec.patch_len())
}

/// Convolution current from unfolded patches, laid out `[B, Ch_out, H′, W′]`.
pub(crate) fn conv_current(
    patches: &[i32],
    binary: bool,
    kcols: &[i32],
    batch: usize,
    positions: usize,
    spec: &ConvSpec,
    counter: &mut OpCounter,
) -> Vec<i64> {
    let (q, co) = (spec.patch_len(), spec.out_channels);
    let mut out = vec![0i64; batch * co * positions];
    let mut acc = vec![0i64; co];
    for b in 0..batch {
        for pos in 0..positions {
            acc.iter_mut().for_each(|a| *a = 0);
            let patch = &patches[(b * positions + pos) * q..][..q];
            for (pi, &x) in patch.iter().enumerate() {
                if x == 0 {
                    continue;
                }
                let col = &kcols[pi * co..(pi + 1) * co];
                for (a, &wv) in acc.iter_mut().zip(col) {
                    *a += wv as i64 * x as i64;
                }
            }
            for (c, &a) in acc.iter().enumerate() {
                out[(b * co + c) * positions + pos] = a;
            }
        }
    }
    let macs = (batch * positions * co * q) as u64;
    counter.record(if binary { OpKind::BMul } else { OpKind::Mul }, macs);
    counter.record(OpKind::Add, macs);
    out
}

/// Integer cross-correlation of `[B, Ch_in, H, W]` input with the inference
/// kernel, returning `[B, Ch_out, H′, W′]` saturated to 32 bits.
pub fn conv_forward(
    spikes_in: &IntTensor,
    weights: &MixedPrecisionLayerWeights,
    spec: &ConvSpec,
    counter: &mut OpCounter,
) -> Result<IntTensor> {
    let (b, h, w) = spec.input_dims(spikes_in)?;
    let (oh, ow) = spec.output_dims(h, w)?;
    if weights.shape() != spec.weight_shape() {
        return Err(Error::Geometry(format!(
            "kernel shape {:?} does not match spec {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    let patches = unfold_raw(spikes_in.data(), b, (h, w), (oh, ow), spec);
    let kcols = kernel_columns(weights.lp().data(), spec);
    let wide = conv_current(&patches, spikes_in.is_binary(), &kcols, b, oh * ow, spec, counter);
    IntTensor::from_wide(&[b, spec.out_channels, oh, ow], BitWidth::W32, &wide, counter)
}

/// Correlation trace `[B, Ch_out, H′, W′, Ch_in, k, k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvCorrTrace {
    pub data: IntTensor,
}

impl ConvCorrTrace {
    pub fn zeros(batch: usize, spec: &ConvSpec, (oh, ow): (usize, usize)) -> Self {
        ConvCorrTrace {
            data: IntTensor::zeros(
                &[batch, spec.out_channels, oh, ow, spec.in_channels, spec.kernel, spec.kernel],
                CORR_TRACE_WIDTH,
            ),
        }
    }
}

fn gated_patch_accumulate(trace: &mut [i32], patches: &[i32], sg: &[i32], batch: usize, co: usize, positions: usize, q: usize) {
    for b in 0..batch {
        for c in 0..co {
            for pos in 0..positions {
                let g = (b * co + c) * positions + pos;
                if sg[g] == 0 {
                    continue;
                }
                let src = &patches[(b * positions + pos) * q..][..q];
                let dst = &mut trace[g * q..(g + 1) * q];
                for (d, &p) in dst.iter_mut().zip(src) {
                    *d = d.saturating_add(p);
                }
            }
        }
    }
}

/// `trace[b,co,y,x,·] += unfold(t_pre)[b,y,x,·] · sg[b,co,y,x]`
pub fn conv_corr_update(
    trace: &mut ConvCorrTrace,
    t_pre_spatial: &IntTensor,
    sg: &IntTensor,
    spec: &ConvSpec,
    counter: &mut OpCounter,
) -> Result<()> {
    let (b, h, w) = spec.input_dims(t_pre_spatial)?;
    let (oh, ow) = spec.output_dims(h, w)?;
    let expect_sg = [b, spec.out_channels, oh, ow];
    if sg.shape() != expect_sg {
        return Err(Error::Geometry(format!("surrogate shape {:?}, expected {expect_sg:?}", sg.shape())));
    }
    let expect_tr = [b, spec.out_channels, oh, ow, spec.in_channels, spec.kernel, spec.kernel];
    if trace.data.shape() != expect_tr {
        return Err(Error::Geometry(format!(
            "trace shape {:?}, expected {expect_tr:?}",
            trace.data.shape()
        )));
    }
    let patches = unfold_raw(t_pre_spatial.data(), b, (h, w), (oh, ow), spec);
    gated_patch_accumulate(
        trace.data.data_mut(),
        &patches,
        sg.data(),
        b,
        spec.out_channels,
        oh * ow,
        spec.patch_len(),
    );
    let n = trace.data.len() as u64;
    counter.record(OpKind::BMul, n);
    counter.record(OpKind::Add, n);
    Ok(())
}

/// Route the output error back onto the conv output map through the
/// transposed inference weights of the following fully-connected layer.
///
/// `error` is `[B, classes]`, `fc_lp` is `[classes, Ch_out·H′·W′]`; the
/// result is `[B, Ch_out, H′, W′]`.
pub fn conv_error_feedback(
    error: &IntTensor,
    fc_lp: &IntTensor,
    spec: &ConvSpec,
    (oh, ow): (usize, usize),
    counter: &mut OpCounter,
) -> Result<IntTensor> {
    let (b, classes) = match error.shape() {
        [b, c] => (*b, *c),
        other => return Err(Error::shape(other, fc_lp.shape(), "conv feedback error")),
    };
    let neurons = spec.out_channels * oh * ow;
    if fc_lp.shape() != [classes, neurons] {
        return Err(Error::shape(error.shape(), fc_lp.shape(), "conv feedback weights"));
    }
    let fb = matmul_counted(error, fc_lp, counter)?;
    fb.reshape(&[b, spec.out_channels, oh, ow])
}

/// Kernel gradient `Δ[co, ·] = Σ_{b,y,x} v_fb[b,co,y,x] · trace[b,co,y,x,·]`.
pub fn conv_batch_gradient(v_fb: &IntTensor, trace: &ConvCorrTrace, counter: &mut OpCounter) -> Result<IntTensor> {
    let ts = trace.data.shape();
    if ts.len() != 7 || v_fb.shape() != &ts[..4] {
        return Err(Error::shape(v_fb.shape(), ts, "conv gradient"));
    }
    let (b, co, positions, q) = (ts[0], ts[1], ts[2] * ts[3], ts[4] * ts[5] * ts[6]);
    let mut wide = vec![0i64; co * q];
    let fb = v_fb.data();
    let tr = trace.data.data();
    for bi in 0..b {
        for c in 0..co {
            let acc = &mut wide[c * q..(c + 1) * q];
            for pos in 0..positions {
                let g = (bi * co + c) * positions + pos;
                let f = fb[g] as i64;
                if f == 0 {
                    continue;
                }
                for (a, &t) in acc.iter_mut().zip(&tr[g * q..(g + 1) * q]) {
                    *a += f * t as i64;
                }
            }
        }
    }
    let n = trace.data.len() as u64;
    counter.record(OpKind::Mul, n);
    counter.record(OpKind::Add, n);
    IntTensor::from_wide(&[co, ts[4], ts[5], ts[6]], BitWidth::W32, &wide, counter)
}

/// Per-batch state of a convolutional LIF layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayerState {
    /// `[B, Ch_out, H′, W′]`
    pub v: IntTensor,
    /// `[B, Ch_in, H, W]`
    pub t_pre: IntTensor,
    pub trace: ConvCorrTrace,
    pub params: LifParams,
    pub spec: ConvSpec,
    pub in_hw: (usize, usize),
    pub out_hw: (usize, usize),
}

impl ConvLayerState {
    pub fn new(batch: usize, spec: ConvSpec, in_hw: (usize, usize), params: LifParams, voltage_width: BitWidth) -> Result<Self> {
        let out_hw = spec.output_dims(in_hw.0, in_hw.1)?;
        Ok(ConvLayerState {
            v: IntTensor::zeros(&[batch, spec.out_channels, out_hw.0, out_hw.1], voltage_width),
            t_pre: IntTensor::zeros(&[batch, spec.in_channels, in_hw.0, in_hw.1], PRE_TRACE_WIDTH),
            trace: ConvCorrTrace::zeros(batch, &spec, out_hw),
            params,
            spec,
            in_hw,
            out_hw,
        })
    }

    pub fn batch(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn reset_state(&mut self) {
        self.v.fill_zero();
        self.t_pre.fill_zero();
        self.trace.data.fill_zero();
    }

    /// One timestep on a flat `[B, Ch_in·H·W]` (or 4-d) input, with the kernel
    /// given as `[patch, Ch_out]` columns.
    pub(crate) fn step_with(
        &mut self,
        kcols: &[i32],
        input: &IntTensor,
        learn: bool,
        counter: &mut OpCounter,
    ) -> Result<LayerStep> {
        let b = self.batch();
        let per_sample = self.spec.in_channels * self.in_hw.0 * self.in_hw.1;
        if input.len() != b * per_sample || input.shape()[0] != b {
            return Err(Error::shape(input.shape(), &[b, per_sample], "conv layer input"));
        }
        let positions = self.out_hw.0 * self.out_hw.1;
        let patches = unfold_raw(input.data(), b, self.in_hw, self.out_hw, &self.spec);
        let current = conv_current(&patches, input.is_binary(), kcols, b, positions, &self.spec, counter);
        leak_and_add(&mut self.v, &current, self.params.beta_shift(), counter);
        let surrogate = surrogate_grad(&self.v, &self.params);
        let spikes = fire_and_reset(&mut self.v, self.params.v_th(), counter);
        if learn {
            advance_pre_trace(&mut self.t_pre, input.data(), self.params.beta_shift(), counter);
            let pre_patches = unfold_raw(self.t_pre.data(), b, self.in_hw, self.out_hw, &self.spec);
            gated_patch_accumulate(
                self.trace.data.data_mut(),
                &pre_patches,
                surrogate.data(),
                b,
                self.spec.out_channels,
                positions,
                self.spec.patch_len(),
            );
            let n = self.trace.data.len() as u64;
            counter.record(OpKind::BMul, n);
            counter.record(OpKind::Add, n);
        }
        Ok(LayerStep { spikes, surrogate })
    }
}
