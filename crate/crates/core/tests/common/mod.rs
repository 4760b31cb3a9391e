//! Shared test support: random tiny networks and an arbitrary-precision
//! reference for one full training batch.
#![allow(dead_code)]

pub mod invariants;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use intsnn::config::{Architecture, LayerParams, NetConfig, TrainConfig, UpdateSchedule};
use intsnn::conv::ConvSpec;
use intsnn::cost::OpCounter;
use intsnn::data::EncodedBatch;
use intsnn::learner::{train_batch, BatchOutcome};
use intsnn::network::Network;
use intsnn::recurrent::RecurrentWeights;
use intsnn::tensor::{BitWidth, IntTensor};
use intsnn::weights::{MixedPrecisionLayerWeights, UpdateParams};

#[derive(Debug, Clone)]
pub struct Case {
    pub cfg: NetConfig,
    pub train: TrainConfig,
    /// Shadow values per trainable layer, input side first.
    pub shadows: Vec<Vec<i32>>,
    /// `[hidden, hidden]`, row = postsynaptic neuron.
    pub recurrent: Option<Vec<i32>>,
    /// One `[batch × inputs]` frame per timestep.
    pub frames: Vec<Vec<i32>>,
    pub labels: Vec<usize>,
}

fn width(bits: u32) -> BitWidth {
    BitWidth::new(bits).unwrap()
}

fn rand_in_width(rng: &mut ChaCha8Rng, bits: u32) -> i32 {
    let w = width(bits);
    rng.gen_range(w.min_value()..=w.max_value()) as i32
}

fn layer_params(rng: &mut ChaCha8Rng, lb: u32, vb: u32, fan_in: usize, input_max: i32) -> LayerParams {
    // Thresholds around the typical drive so that some neurons fire and some do not.
    let drive = ((1i64 << (lb - 1)) * fan_in as i64 * input_max as i64).max(2);
    let cap = (1i64 << (vb - 2)).max(2);
    let hi = (drive / 8).clamp(1, cap);
    let v_th = rng.gen_range(1..=hi) as i32;
    LayerParams {
        v_th,
        grad_win: rng.gen_range(1..=(2 * v_th as i64).min(cap)) as i32,
        beta_shift: rng.gen_range(0..=3),
        eta_shift: rng.gen_range(0..=12),
        decay_shift: rng.gen_range(1..=16),
    }
}

/// A random network with at most 8 neurons per layer and at most 4 timesteps.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = match rng.gen_range(0..3) {
        0 => Architecture::Fc,
        1 => Architecture::Conv,
        _ => Architecture::Recurrent,
    };
    random_case_with(&mut rng, arch)
}

pub fn random_case_with(rng: &mut ChaCha8Rng, arch: Architecture) -> Case {
    let sb = rng.gen_range(4..=16);
    let lb = rng.gen_range(4..=sb);
    let vb = match arch {
        Architecture::Recurrent => rng.gen_range(16..=32),
        _ => rng.gen_range(8..=32),
    };
    let classes = rng.gen_range(2..=4);
    let batch = rng.gen_range(1..=3);
    let timesteps = rng.gen_range(1..=4);
    let input_max = if rng.gen_bool(0.5) { 1 } else { rng.gen_range(2..=15) };

    let (input_shape, conv, hidden, first_shape) = match arch {
        Architecture::Conv => loop {
            let spec = ConvSpec {
                in_channels: rng.gen_range(1..=2),
                out_channels: rng.gen_range(1..=2),
                kernel: rng.gen_range(1..=3),
                stride: rng.gen_range(1..=2),
                padding: rng.gen_range(0..=1),
            };
            let (h, w) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
            if let Ok((oh, ow)) = spec.output_dims(h, w) {
                if spec.out_channels * oh * ow <= 8 {
                    break (vec![spec.in_channels, h, w], Some(spec), 0, spec.weight_shape().to_vec());
                }
            }
        },
        _ => {
            let inputs = rng.gen_range(1..=8);
            let hidden = if arch == Architecture::Recurrent || rng.gen_bool(0.7) {
                rng.gen_range(1..=8)
            } else {
                0
            };
            let first = if hidden > 0 { vec![hidden, inputs] } else { vec![classes, inputs] };
            (vec![inputs], None, hidden, first)
        }
    };
    let inputs: usize = input_shape.iter().product();

    let mut shapes = vec![first_shape.clone()];
    let first_neurons = match (arch, conv) {
        (Architecture::Conv, Some(spec)) => {
            let (oh, ow) = spec.output_dims(input_shape[1], input_shape[2]).unwrap();
            spec.out_channels * oh * ow
        }
        _ => first_shape[0],
    };
    if arch == Architecture::Conv || hidden > 0 {
        shapes.push(vec![classes, first_neurons]);
    }
    let fan_ins: Vec<usize> = shapes.iter().map(|s| s[1..].iter().product()).collect();
    let layers: Vec<LayerParams> = fan_ins
        .iter()
        .enumerate()
        .map(|(i, &f)| layer_params(rng, lb, vb, f, if i == 0 { input_max } else { 1 }))
        .collect();

    let cfg = NetConfig {
        architecture: arch,
        input_shape,
        input_max: input_max as u32,
        hidden,
        conv,
        classes,
        shadow_bits: sb,
        infer_bits: lb,
        voltage_bits: vb,
        layers,
    };
    let train = TrainConfig {
        alpha: rng.gen_range(1..=64),
        timesteps,
        batch_size: batch,
        epochs: 1,
        seed: 0,
        clip: rng.gen_range(1..=1 << 20),
        schedule: if rng.gen_bool(0.25) {
            UpdateSchedule::Step
        } else {
            UpdateSchedule::Sequence
        },
    };
    let shadows = shapes
        .iter()
        .map(|s| (0..s.iter().product::<usize>()).map(|_| rand_in_width(rng, sb)).collect())
        .collect();
    let recurrent = (arch == Architecture::Recurrent)
        .then(|| (0..hidden * hidden).map(|_| rand_in_width(rng, lb)).collect());
    let frames = (0..timesteps)
        .map(|_| {
            (0..batch * inputs)
                .map(|_| if rng.gen_bool(0.5) { rng.gen_range(1..=input_max) } else { 0 })
                .collect()
        })
        .collect();
    let labels = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    Case {
        cfg,
        train,
        shadows,
        recurrent,
        frames,
        labels,
    }
}

impl Case {
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        Network::new(&self.cfg, &self.train)
            .unwrap()
            .all_weights()
            .iter()
            .map(|w| w.shape().to_vec())
            .collect()
    }

    pub fn network(&self) -> Network {
        let sb = width(self.cfg.shadow_bits);
        let lb = width(self.cfg.infer_bits);
        let weights = self
            .layer_shapes()
            .iter()
            .zip(&self.shadows)
            .zip(&self.cfg.layers)
            .map(|((shape, vals), p)| {
                let shadow = IntTensor::from_vec(shape, sb, vals.clone()).unwrap();
                let update = UpdateParams {
                    eta_shift: p.eta_shift,
                    decay_shift: p.decay_shift,
                    clip: self.train.clip,
                };
                MixedPrecisionLayerWeights::from_shadow(shadow, lb, update).unwrap()
            })
            .collect();
        let rec = self.recurrent.as_ref().map(|r| {
            let n = self.cfg.hidden;
            RecurrentWeights::new(IntTensor::from_vec(&[n, n], lb, r.clone()).unwrap()).unwrap()
        });
        Network::from_weights(&self.cfg, weights, rec).unwrap()
    }

    pub fn batch(&self) -> EncodedBatch {
        let b = self.labels.len();
        let inputs = self.cfg.input_elements();
        let frames = self
            .frames
            .iter()
            .map(|f| {
                if self.cfg.input_max <= 1 {
                    IntTensor::binary(&[b, inputs], f.clone()).unwrap()
                } else {
                    IntTensor::from_vec(&[b, inputs], BitWidth::W16, f.clone()).unwrap()
                }
            })
            .collect();
        EncodedBatch {
            frames,
            labels: self.labels.clone(),
        }
    }

    /// Run the engine; returns the trained network, outcome, and counter.
    pub fn run_engine(&self) -> (Network, BatchOutcome, OpCounter) {
        let mut net = self.network();
        let mut counter = OpCounter::new();
        let out = train_batch(&mut net, &self.batch(), &self.train, &mut counter).unwrap();
        (net, out, counter)
    }
}

// ---------------------------------------------------------------------------
// Reference arithmetic

fn big(x: i64) -> BigInt {
    BigInt::from(x)
}

fn pow2(k: u32) -> BigInt {
    BigInt::one() << k as usize
}

/// Floor division by 2^k.
pub fn shr(x: &BigInt, k: u32) -> BigInt {
    x.div_floor(&pow2(k))
}

pub fn sat(x: BigInt, bits: u32) -> BigInt {
    let hi = pow2(bits - 1) - 1;
    let lo = -pow2(bits - 1);
    if x > hi {
        hi
    } else if x < lo {
        lo
    } else {
        x
    }
}

fn floor_log2(n: usize) -> u32 {
    let mut k = 0;
    while (2usize << k) <= n {
        k += 1;
    }
    k
}

#[derive(Debug, Clone, Copy)]
enum Geo {
    Dense {
        n: usize,
        i: usize,
    },
    Conv {
        ci: usize,
        h: usize,
        w: usize,
        co: usize,
        k: usize,
        s: usize,
        p: usize,
        oh: usize,
        ow: usize,
    },
}

impl Geo {
    fn neurons(&self) -> usize {
        match *self {
            Geo::Dense { n, .. } => n,
            Geo::Conv { co, oh, ow, .. } => co * oh * ow,
        }
    }
    fn inputs(&self) -> usize {
        match *self {
            Geo::Dense { i, .. } => i,
            Geo::Conv { ci, h, w, .. } => ci * h * w,
        }
    }
    fn weights(&self) -> usize {
        match *self {
            Geo::Dense { n, i } => n * i,
            Geo::Conv { ci, co, k, .. } => co * ci * k * k,
        }
    }
    /// Presynaptic trace elements paired with each neuron.
    fn corr_per_neuron(&self) -> usize {
        match *self {
            Geo::Dense { i, .. } => i,
            Geo::Conv { ci, k, .. } => ci * k * k,
        }
    }
    /// Input element read by neuron `n` through kernel/weight slot `q`, if any.
    fn tap(&self, n: usize, q: usize) -> Option<usize> {
        match *self {
            Geo::Dense { .. } => Some(q),
            Geo::Conv {
                h,
                w,
                k,
                s,
                p,
                oh,
                ow,
                ..
            } => {
                let pos = n % (oh * ow);
                let (y, x) = (pos / ow, pos % ow);
                let c = q / (k * k);
                let (u, v) = ((q / k) % k, q % k);
                let iy = (y * s + u) as isize - p as isize;
                let ix = (x * s + v) as isize - p as isize;
                (iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w)
                    .then(|| (c * h + iy as usize) * w + ix as usize)
            }
        }
    }
    /// Weight index used by neuron `n` for slot `q`.
    fn weight_index(&self, n: usize, q: usize) -> usize {
        match *self {
            Geo::Dense { i, .. } => n * i + q,
            Geo::Conv { ci, k, oh, ow, .. } => (n / (oh * ow)) * ci * k * k + q,
        }
    }
}

struct LayerRef {
    geo: Geo,
    p: LayerParams,
    shadow: Vec<BigInt>,
    lp: Vec<BigInt>,
    v: Vec<BigInt>,
    t_pre: Vec<BigInt>,
    t_corr: Vec<BigInt>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefOutcome {
    pub shadows: Vec<Vec<BigInt>>,
    pub lps: Vec<Vec<BigInt>>,
    pub counts: Vec<BigInt>,
    pub predictions: Vec<usize>,
    pub abs_error: BigInt,
}

/// One training batch in exact arithmetic, written directly from the
/// update rules with explicit saturation at every stored width.
pub fn reference_train_batch(case: &Case) -> RefOutcome {
    let cfg = &case.cfg;
    let (sb, lb, vb) = (cfg.shadow_bits, cfg.infer_bits, cfg.voltage_bits);
    let b = case.labels.len();
    let classes = cfg.classes;

    let mut geos = Vec::new();
    match cfg.architecture {
        Architecture::Conv => {
            let spec = cfg.conv.unwrap();
            let (h, w) = (cfg.input_shape[1], cfg.input_shape[2]);
            let (oh, ow) = spec.output_dims(h, w).unwrap();
            let g = Geo::Conv {
                ci: spec.in_channels,
                h,
                w,
                co: spec.out_channels,
                k: spec.kernel,
                s: spec.stride,
                p: spec.padding,
                oh,
                ow,
            };
            geos.push(g);
            geos.push(Geo::Dense {
                n: classes,
                i: g.neurons(),
            });
        }
        _ => {
            let i = cfg.input_shape[0];
            if cfg.hidden > 0 {
                geos.push(Geo::Dense { n: cfg.hidden, i });
                geos.push(Geo::Dense {
                    n: classes,
                    i: cfg.hidden,
                });
            } else {
                geos.push(Geo::Dense { n: classes, i });
            }
        }
    }

    let requant = |s: &BigInt| sat(shr(s, sb - lb), lb);
    let mut layers: Vec<LayerRef> = geos
        .iter()
        .zip(&case.shadows)
        .zip(&cfg.layers)
        .map(|((&geo, sh), &p)| {
            assert_eq!(sh.len(), geo.weights());
            let shadow: Vec<BigInt> = sh.iter().map(|&x| big(x as i64)).collect();
            let lp = shadow.iter().map(requant).collect();
            LayerRef {
                geo,
                p,
                shadow,
                lp,
                v: vec![BigInt::zero(); b * geo.neurons()],
                t_pre: vec![BigInt::zero(); b * geo.inputs()],
                t_corr: vec![BigInt::zero(); b * geo.neurons() * geo.corr_per_neuron()],
            }
        })
        .collect();
    let w_rec: Option<Vec<BigInt>> = case
        .recurrent
        .as_ref()
        .map(|r| r.iter().map(|&x| big(x as i64)).collect());

    let ts = case.frames.len();
    let mut counts = vec![BigInt::zero(); b * classes];
    let mut abs_error = BigInt::zero();
    let mut predictions = Vec::new();

    for (t, frame) in case.frames.iter().enumerate() {
        let mut input: Vec<BigInt> = frame.iter().map(|&x| big(x as i64)).collect();
        for (li, layer) in layers.iter_mut().enumerate() {
            let geo = layer.geo;
            let (nn, ni, q_len) = (geo.neurons(), geo.inputs(), geo.corr_per_neuron());
            let p = layer.p;
            let v_th = big(p.v_th as i64);
            let mut spikes = vec![BigInt::zero(); b * nn];
            let mut sg = vec![false; b * nn];
            for bi in 0..b {
                let x = &input[bi * ni..(bi + 1) * ni];
                let v_prev: Vec<BigInt> = layer.v[bi * nn..(bi + 1) * nn].to_vec();
                for n in 0..nn {
                    let mut cur = BigInt::zero();
                    for q in 0..q_len {
                        if let Some(src) = geo.tap(n, q) {
                            cur += &layer.lp[geo.weight_index(n, q)] * &x[src];
                        }
                    }
                    if li == 0 {
                        if let Some(wr) = &w_rec {
                            for (j, vp) in v_prev.iter().enumerate() {
                                let low = sat(shr(vp, vb - 16), 16);
                                cur += &wr[n * nn + j] * low;
                            }
                        }
                    }
                    let idx = bi * nn + n;
                    let v = sat(shr(&layer.v[idx], p.beta_shift) + cur, vb);
                    sg[idx] = (&v - &v_th).abs() < big(p.grad_win as i64);
                    if v >= v_th {
                        spikes[idx] = BigInt::one();
                        layer.v[idx] = v - &v_th;
                    } else {
                        layer.v[idx] = v;
                    }
                }
            }
            for (tp, x) in layer.t_pre.iter_mut().zip(&input) {
                *tp = sat(shr(tp, p.beta_shift) + x, 16);
            }
            for bi in 0..b {
                for n in 0..nn {
                    if !sg[bi * nn + n] {
                        continue;
                    }
                    for q in 0..q_len {
                        if let Some(src) = geo.tap(n, q) {
                            let slot = &mut layer.t_corr[(bi * nn + n) * q_len + q];
                            *slot = sat(&*slot + &layer.t_pre[bi * ni + src], 32);
                        }
                    }
                }
            }
            input = spikes;
        }
        for (c, s) in counts.iter_mut().zip(&input) {
            *c += s;
        }
        let step_schedule = case.train.schedule == UpdateSchedule::Step;
        if step_schedule || t + 1 == ts {
            if t + 1 == ts {
                predictions = argmax_rows(&counts, classes);
            }
            let seen = if step_schedule { t + 1 } else { ts };
            abs_error = learn(&mut layers, &counts, &case.labels, classes, seen, &case.train, sb, lb);
        }
    }

    RefOutcome {
        shadows: layers.iter().map(|l| l.shadow.clone()).collect(),
        lps: layers.iter().map(|l| l.lp.clone()).collect(),
        counts,
        predictions,
        abs_error,
    }
}

fn argmax_rows(counts: &[BigInt], classes: usize) -> Vec<usize> {
    counts
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, c) in row.iter().enumerate() {
                if c > &row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn learn(
    layers: &mut [LayerRef],
    counts: &[BigInt],
    labels: &[usize],
    classes: usize,
    seen: usize,
    train: &TrainConfig,
    sb: u32,
    lb: u32,
) -> BigInt {
    let b = labels.len();
    let alpha = big(train.alpha as i64);
    let shift = floor_log2(seen);
    let mut error = vec![BigInt::zero(); b * classes];
    for bi in 0..b {
        for c in 0..classes {
            let y = if labels[bi] == c { alpha.clone() } else { BigInt::zero() };
            error[bi * classes + c] = sat(shr(&(&counts[bi * classes + c] * &alpha), shift) - y, 32);
        }
    }
    let abs_error = error.iter().map(|e| e.abs()).sum();
    let last = layers.len() - 1;
    let out_lp = layers[last].lp.clone();
    let out_inputs = layers[last].geo.inputs();
    let clip = big(train.clip as i64);

    let mut deltas = Vec::with_capacity(layers.len());
    for (li, layer) in layers.iter().enumerate() {
        let geo = layer.geo;
        let nn = geo.neurons();
        let fb: Vec<BigInt> = if li == last {
            error.clone()
        } else {
            let mut fb = vec![BigInt::zero(); b * nn];
            for bi in 0..b {
                for n in 0..nn {
                    let mut acc = BigInt::zero();
                    for c in 0..classes {
                        acc += &error[bi * classes + c] * &out_lp[c * out_inputs + n];
                    }
                    fb[bi * nn + n] = sat(acc, 32);
                }
            }
            fb
        };
        let q_len = geo.corr_per_neuron();
        let mut delta = vec![BigInt::zero(); geo.weights()];
        for bi in 0..b {
            for n in 0..nn {
                for q in 0..q_len {
                    delta[geo.weight_index(n, q)] += &fb[bi * nn + n] * &layer.t_corr[(bi * nn + n) * q_len + q];
                }
            }
        }
        let delta: Vec<BigInt> = delta
            .into_iter()
            .map(|d| {
                let d = sat(d, 32);
                if d > clip {
                    clip.clone()
                } else if d < -&clip {
                    -&clip
                } else {
                    d
                }
            })
            .collect();
        deltas.push(delta);
    }
    for (layer, delta) in layers.iter_mut().zip(deltas) {
        let (eta, rho) = (layer.p.eta_shift, layer.p.decay_shift);
        for (w, d) in layer.shadow.iter_mut().zip(&delta) {
            *w = sat(&*w - shr(d, eta) - shr(w, rho), sb);
        }
        layer.lp = layer.shadow.iter().map(|s| sat(shr(s, sb - lb), lb)).collect();
    }
    abs_error
}

/// Compare engine and reference; returns a description of the first mismatch.
pub fn compare(case: &Case) -> Result<(), String> {
    let reference = reference_train_batch(case);
    let (net, out, _) = case.run_engine();
    for (i, w) in net.all_weights().iter().enumerate() {
        let got: Vec<BigInt> = w.shadow().data().iter().map(|&x| big(x as i64)).collect();
        if got != reference.shadows[i] {
            return Err(format!("layer {i} shadow differs"));
        }
        let got: Vec<BigInt> = w.lp().data().iter().map(|&x| big(x as i64)).collect();
        if got != reference.lps[i] {
            return Err(format!("layer {i} inference weights differ"));
        }
    }
    if out.predictions != reference.predictions {
        return Err(format!(
            "predictions {:?} vs {:?}",
            out.predictions, reference.predictions
        ));
    }
    if big(out.abs_error as i64) != reference.abs_error {
        return Err(format!(
            "abs error {} vs {}",
            out.abs_error,
            reference.abs_error.to_i64().unwrap_or(i64::MAX)
        ));
    }
    Ok(())
}

pub fn pass_line(name: &str, ok: bool, detail: &str) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}
