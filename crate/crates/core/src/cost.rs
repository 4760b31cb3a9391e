//! Operation and memory accounting.
//!
//! Counts follow the dense algorithm: a tally depends only on tensor shapes,
//! never on how many operands happen to be zero, so two runs over inputs of
//! the same shape always report the same totals. Kernels are free to skip
//! zero operands internally.
//!
//! Conventions:
//! - one multiply-accumulate is 1 MUL + 1 ADD (subtractions count as ADD);
//! - a multiply with a binary operand (spike, surrogate gradient, one-hot
//!   label) is a B-MUL instead of a MUL;
//! - every shifted element is one SHIFT;
//! - comparisons (thresholding, windowing, clipping, saturation) are free.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::config::{NetConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Mul,
    BMul,
    Shift,
    Exp,
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Forward,
    Backward,
    Update,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Forward, Phase::Backward, Phase::Update];

    fn index(self) -> usize {
        match self {
            Phase::Forward => 0,
            Phase::Backward => 1,
            Phase::Update => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTally {
    pub add: u64,
    pub mul: u64,
    pub bmul: u64,
    pub shift: u64,
    pub exp: u64,
    pub float_ops: u64,
}

impl OpTally {
    fn slot(&mut self, kind: OpKind) -> &mut u64 {
        match kind {
            OpKind::Add => &mut self.add,
            OpKind::Mul => &mut self.mul,
            OpKind::BMul => &mut self.bmul,
            OpKind::Shift => &mut self.shift,
            OpKind::Exp => &mut self.exp,
            OpKind::Float => &mut self.float_ops,
        }
    }

    pub fn get(&self, kind: OpKind) -> u64 {
        match kind {
            OpKind::Add => self.add,
            OpKind::Mul => self.mul,
            OpKind::BMul => self.bmul,
            OpKind::Shift => self.shift,
            OpKind::Exp => self.exp,
            OpKind::Float => self.float_ops,
        }
    }
}

impl Add for OpTally {
    type Output = OpTally;

    fn add(mut self, rhs: OpTally) -> OpTally {
        self += rhs;
        self
    }
}

impl AddAssign for OpTally {
    fn add_assign(&mut self, rhs: OpTally) {
        self.add += rhs.add;
        self.mul += rhs.mul;
        self.bmul += rhs.bmul;
        self.shift += rhs.shift;
        self.exp += rhs.exp;
        self.float_ops += rhs.float_ops;
    }
}

/// Per-phase operation tallies.
///
/// Single writer per training step. Shards merge by plain addition, so the
/// merge order never changes the result.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    phase: Option<Phase>,
    tallies: [OpTally; 3],
    saturations: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = Some(phase);
    }

    pub fn active_phase(&self) -> Phase {
        self.phase.unwrap_or(Phase::Forward)
    }

    pub fn record(&mut self, kind: OpKind, n: u64) {
        let idx = self.active_phase().index();
        *self.tallies[idx].slot(kind) += n;
    }

    /// Diagnostic count of values clamped on write-back to a narrower width.
    pub fn record_saturations(&mut self, n: u64) {
        self.saturations += n;
    }

    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    pub fn phase(&self, phase: Phase) -> OpTally {
        self.tallies[phase.index()]
    }

    pub fn totals(&self) -> OpTally {
        self.tallies.iter().copied().fold(OpTally::default(), Add::add)
    }

    pub fn merge(&mut self, other: &OpCounter) {
        for (mine, theirs) in self.tallies.iter_mut().zip(other.tallies.iter()) {
            *mine += *theirs;
        }
        self.saturations += other.saturations;
    }
}

/// Storage layout used to price tensors in a [`MemoryReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageLayout {
    /// Widths taken from the mixed-precision configuration.
    Mixed,
    /// Every element stored as a 32-bit float.
    Fp32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub name: String,
    pub elements: u64,
    pub bits: u32,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub layout: StorageLayout,
    pub batch_size: usize,
    pub static_items: Vec<MemoryItem>,
    pub dynamic_items: Vec<MemoryItem>,
    pub static_bytes: u64,
    pub dynamic_bytes: u64,
    pub total_bytes: u64,
}

struct ReportBuilder {
    layout: StorageLayout,
    static_items: Vec<MemoryItem>,
    dynamic_items: Vec<MemoryItem>,
}

impl ReportBuilder {
    fn item(&self, name: String, elements: u64, bits: u32) -> MemoryItem {
        let bits = match self.layout {
            StorageLayout::Mixed => bits,
            StorageLayout::Fp32 => 32,
        };
        MemoryItem {
            name,
            elements,
            bits,
            bytes: (elements * bits as u64).div_ceil(8),
        }
    }

    fn push_static(&mut self, name: impl Into<String>, elements: u64, bits: u32) {
        let item = self.item(name.into(), elements, bits);
        self.static_items.push(item);
    }

    fn push_dynamic(&mut self, name: impl Into<String>, elements: u64, bits: u32) {
        let item = self.item(name.into(), elements, bits);
        self.dynamic_items.push(item);
    }
}

/// Bits needed for a signed integer holding values in `0..=max`.
fn signed_bits_for(max: u64) -> u32 {
    (64 - max.leading_zeros()) + 1
}

/// Static and dynamic memory footprint of one training iteration.
///
/// Static memory holds both weight copies and the scalar layer/training
/// parameters. Dynamic memory holds everything rebuilt each iteration:
/// input frames, voltages, spikes, surrogate gradients, both traces, the
/// feedback voltages, the per-sample gradient terms before the batch sum,
/// and the reduced gradient. Each tensor is rounded up to whole bytes.
///
/// In the mixed layout, weights use their shadow/inference widths, traces
/// are stored at inference width, and voltages, feedback, and gradient terms
/// at shadow width. Spikes and surrogate gradients take one bit.
pub fn memory_report(net: &NetConfig, train: &TrainConfig, layout: StorageLayout) -> MemoryReport {
    let batch_size = train.batch_size;
    let b = batch_size as u64;
    let shadow = net.shadow_bits;
    let lp = net.infer_bits;
    let mut rb = ReportBuilder {
        layout,
        static_items: Vec::new(),
        dynamic_items: Vec::new(),
    };

    // Global scalars: loss precision, timestep shift, clip bound.
    rb.push_static("param.alpha", 1, signed_bits_for(train.alpha as u64));
    rb.push_static("param.ts_shift", 1, 8);
    rb.push_static("param.clip", 1, signed_bits_for(train.clip as u64));

    let input_elems = net.input_elements() as u64;
    let input_bits = if net.input_max <= 1 {
        1
    } else {
        signed_bits_for(net.input_max as u64) - 1
    };
    rb.push_dynamic("input.frame", b * input_elems, input_bits);

    let layers = net.layer_geometries();
    for (idx, geo) in layers.iter().enumerate() {
        let lname = format!("layer{idx}");
        // v_th, grad_win, β̂, η̂, ρ̂
        rb.push_static(format!("{lname}.params"), 5, 16);
        rb.push_static(format!("{lname}.shadow"), geo.weight_elements, shadow);
        rb.push_static(format!("{lname}.lp"), geo.weight_elements, lp);
        if geo.recurrent {
            rb.push_static(
                format!("{lname}.recurrent"),
                geo.neurons * geo.neurons,
                lp,
            );
        }

        rb.push_dynamic(format!("{lname}.voltage"), b * geo.neurons, shadow);
        rb.push_dynamic(format!("{lname}.spikes"), b * geo.neurons, 1);
        rb.push_dynamic(format!("{lname}.surrogate"), b * geo.neurons, 1);
        rb.push_dynamic(format!("{lname}.t_pre"), b * geo.pre_elements, lp);
        rb.push_dynamic(format!("{lname}.t_corr"), b * geo.corr_elements, lp);
        rb.push_dynamic(format!("{lname}.v_fb"), b * geo.neurons, shadow);
        rb.push_dynamic(format!("{lname}.grad_terms"), b * geo.corr_elements, shadow);
        rb.push_dynamic(format!("{lname}.delta"), geo.weight_elements, shadow);
    }
    if let Some(out) = layers.last() {
        let count_bits = signed_bits_for(train.timesteps as u64);
        rb.push_dynamic("output.counts", b * out.neurons, count_bits);
        rb.push_dynamic("output.error", b * out.neurons, shadow);
    }

    let static_bytes = rb.static_items.iter().map(|i| i.bytes).sum();
    let dynamic_bytes = rb.dynamic_items.iter().map(|i| i.bytes).sum();
    MemoryReport {
        layout,
        batch_size,
        static_items: rb.static_items,
        dynamic_items: rb.dynamic_items,
        static_bytes,
        dynamic_bytes,
        total_bytes: static_bytes + dynamic_bytes,
    }
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layout: {:?}", self.layout)?;
        writeln!(f, "batch_size: {}", self.batch_size)?;
        writeln!(f, "static_bytes: {}", self.static_bytes)?;
        writeln!(f, "dynamic_bytes: {}", self.dynamic_bytes)?;
        writeln!(f, "total_bytes: {}", self.total_bytes)?;
        for item in self.static_items.iter() {
            writeln!(f, "static.{}: {} x {}b = {}", item.name, item.elements, item.bits, item.bytes)?;
        }
        for item in self.dynamic_items.iter() {
            writeln!(f, "dynamic.{}: {} x {}b = {}", item.name, item.elements, item.bits, item.bytes)?;
        }
        Ok(())
    }
}

impl fmt::Display for OpTally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "add: {}", self.add)?;
        writeln!(f, "mul: {}", self.mul)?;
        writeln!(f, "bmul: {}", self.bmul)?;
        writeln!(f, "shift: {}", self.shift)?;
        writeln!(f, "exp: {}", self.exp)?;
        writeln!(f, "float_ops: {}", self.float_ops)
    }
}

/// Closed-form operation count of one `train_batch` call.
///
/// Independent of the instrumented kernels; the two must agree exactly.
pub fn batch_op_estimate(net: &NetConfig, train: &TrainConfig) -> OpCounter {
    let b = train.batch_size as u64;
    let t = train.timesteps as u64;
    let mut c = OpCounter::new();
    let layers = net.layer_geometries();

    c.set_phase(Phase::Forward);
    for (idx, geo) in layers.iter().enumerate() {
        let binary_in = if idx == 0 { net.input_max <= 1 } else { true };
        let mac = b * geo.forward_macs;
        let per_step_neurons = b * geo.neurons;
        let pre = b * geo.pre_elements;
        let corr = b * geo.corr_elements;
        let mut step = OpCounter::new();
        step.set_phase(Phase::Forward);
        // current
        step.record(if binary_in { OpKind::BMul } else { OpKind::Mul }, mac);
        step.record(OpKind::Add, mac);
        // leak + integrate
        step.record(OpKind::Shift, per_step_neurons);
        step.record(OpKind::Add, per_step_neurons);
        if geo.recurrent {
            step.record(OpKind::Shift, per_step_neurons);
            step.record(OpKind::Mul, b * geo.neurons * geo.neurons);
            step.record(OpKind::Add, b * geo.neurons * geo.neurons);
            step.record(OpKind::Add, per_step_neurons);
        }
        // soft reset
        step.record(OpKind::BMul, per_step_neurons);
        step.record(OpKind::Add, per_step_neurons);
        // presynaptic trace
        step.record(OpKind::Shift, pre);
        step.record(OpKind::Add, pre);
        // correlation trace
        step.record(OpKind::BMul, corr);
        step.record(OpKind::Add, corr);
        if idx + 1 == layers.len() {
            step.record(OpKind::Add, per_step_neurons);
        }
        for _ in 0..t {
            c.merge(&step);
        }
    }

    c.set_phase(Phase::Backward);
    if let Some(out) = layers.last() {
        let bc = b * out.neurons;
        c.record(OpKind::Mul, bc);
        c.record(OpKind::Shift, bc);
        c.record(OpKind::BMul, bc);
        c.record(OpKind::Add, bc);
    }
    for (idx, geo) in layers.iter().enumerate() {
        if idx + 1 < layers.len() {
            let next = &layers[idx + 1];
            let macs = b * next.neurons * geo.neurons;
            c.record(OpKind::Mul, macs);
            c.record(OpKind::Add, macs);
        }
        c.record(OpKind::Mul, b * geo.corr_elements);
        c.record(OpKind::Add, b * geo.corr_elements);
    }

    c.set_phase(Phase::Update);
    for geo in layers.iter() {
        c.record(OpKind::Shift, 3 * geo.weight_elements);
        c.record(OpKind::Add, 2 * geo.weight_elements);
    }
    c
}

/// Shape summary of one trainable layer, used for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeometry {
    /// Postsynaptic neurons (conv: Ch_out × H′ × W′).
    pub neurons: u64,
    /// Presynaptic inputs feeding the layer (conv: Ch_in × H × W).
    pub inputs: u64,
    /// Elements of the presynaptic trace per sample.
    pub pre_elements: u64,
    /// Elements of the correlation trace per sample.
    pub corr_elements: u64,
    /// Trainable weight elements.
    pub weight_elements: u64,
    /// Multiply-accumulates of the forward current per sample per step.
    pub forward_macs: u64,
    pub recurrent: bool,
}
