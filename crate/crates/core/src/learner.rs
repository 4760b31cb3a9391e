//! Loss, feedback, gradients, and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{TrainConfig, UpdateSchedule};
use crate::conv::conv_batch_gradient;
use crate::cost::{OpCounter, OpKind, OpTally, Phase};
use crate::data::{EncodedBatch, SpikeDataset};
use crate::error::{Error, Result};
use crate::network::{derive_seed, Layer, Network};
use crate::tensor::{matmul_counted, BitWidth, IntTensor};
use crate::weights::clip_gradient;

const SHUFFLE_STREAM: u64 = 0x5f;
const TRAIN_ENCODE_STREAM: u64 = 0x7a1;
const TEST_ENCODE_STREAM: u64 = 0x7e5;

/// Output spike counts accumulated over a sequence, `[B, classes]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionState {
    pub spike_counts: IntTensor,
}

impl PredictionState {
    pub fn new(batch: usize, classes: usize) -> Self {
        PredictionState {
            spike_counts: IntTensor::zeros(&[batch, classes], BitWidth::W32),
        }
    }

    pub fn accumulate(&mut self, spikes: &IntTensor, counter: &mut OpCounter) -> Result<()> {
        if spikes.shape() != self.spike_counts.shape() {
            return Err(Error::shape(spikes.shape(), self.spike_counts.shape(), "output spikes"));
        }
        for (c, &s) in self.spike_counts.data_mut().iter_mut().zip(spikes.data()) {
            *c += s;
        }
        counter.record(OpKind::Add, spikes.len() as u64);
        Ok(())
    }
}

/// Binary `[B, classes]` one-hot labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<IntTensor> {
    let mut data = vec![0; labels.len() * classes];
    for (b, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelRange {
                sample: b,
                label: y as u32,
                classes: classes as u32,
            });
        }
        data[b * classes + y] = 1;
    }
    IntTensor::binary(&[labels.len(), classes], data)
}

/// `error = (counts · α) ≫ ⌊log₂ t_s⌋ − y · α`
pub fn compute_error(
    pred: &PredictionState,
    labels_onehot: &IntTensor,
    cfg: &TrainConfig,
    counter: &mut OpCounter,
) -> Result<IntTensor> {
    let counts = &pred.spike_counts;
    if labels_onehot.shape() != counts.shape() {
        return Err(Error::shape(labels_onehot.shape(), counts.shape(), "labels"));
    }
    let alpha = cfg.alpha as i64;
    let shift = cfg.ts_shift();
    let wide: Vec<i64> = counts
        .data()
        .iter()
        .zip(labels_onehot.data())
        .map(|(&c, &y)| ((c as i64 * alpha) >> shift) - y as i64 * alpha)
        .collect();
    let n = wide.len() as u64;
    counter.record(OpKind::Mul, n);
    counter.record(OpKind::Shift, n);
    counter.record(OpKind::BMul, n);
    counter.record(OpKind::Add, n);
    IntTensor::from_wide(counts.shape(), BitWidth::W32, &wide, counter)
}

/// Arg-max over classes; the lowest index wins ties.
pub fn classify(pred: &PredictionState) -> Vec<usize> {
    let classes = pred.spike_counts.shape()[1];
    if classes == 0 {
        return Vec::new();
    }
    pred.spike_counts
        .data()
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Feedback voltage of a hidden layer: `v_fb[b, n] = Σ_c W_lp[c, n] · e[b, c]`
/// where `W_lp` is `[classes, neurons]` of the following layer.
pub fn hidden_feedback(error: &IntTensor, next_layer_lp: &IntTensor, counter: &mut OpCounter) -> Result<IntTensor> {
    match (error.shape(), next_layer_lp.shape()) {
        ([_, c], [c2, _]) if c == c2 => matmul_counted(error, next_layer_lp, counter),
        _ => Err(Error::shape(error.shape(), next_layer_lp.shape(), "feedback")),
    }
}

/// `Δ[n, i] = Σ_b v_fb[b, n] · t_corr[b, n, i]`, accumulated exactly and
/// saturated to 32 bits.
pub fn batch_gradient(v_fb: &IntTensor, t_corr: &IntTensor, counter: &mut OpCounter) -> Result<IntTensor> {
    let (b, n, i) = match (v_fb.shape(), t_corr.shape()) {
        ([b, n], [b2, n2, i]) if b == b2 && n == n2 => (*b, *n, *i),
        _ => return Err(Error::shape(v_fb.shape(), t_corr.shape(), "batch gradient")),
    };
    let mut wide = vec![0i64; n * i];
    let fb = v_fb.data();
    let tc = t_corr.data();
    for bi in 0..b {
        for ni in 0..n {
            let f = fb[bi * n + ni] as i64;
            if f == 0 {
                continue;
            }
            let src = &tc[(bi * n + ni) * i..(bi * n + ni + 1) * i];
            for (a, &t) in wide[ni * i..(ni + 1) * i].iter_mut().zip(src) {
                *a += f * t as i64;
            }
        }
    }
    let macs = t_corr.len() as u64;
    counter.record(OpKind::Mul, macs);
    counter.record(OpKind::Add, macs);
    IntTensor::from_wide(&[n, i], BitWidth::W32, &wide, counter)
}

/// Result of one training or evaluation batch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BatchOutcome {
    pub samples: usize,
    pub correct: usize,
    /// Σ |error| over the batch (zero for evaluation).
    pub abs_error: u64,
    pub predictions: Vec<usize>,
}

fn check_batch(net: &Network, batch: &EncodedBatch, cfg: &TrainConfig) -> Result<usize> {
    let b = batch.labels.len();
    if batch.frames.len() != cfg.timesteps {
        return Err(Error::Dataset(format!(
            "batch has {} frames, expected t_s = {}",
            batch.frames.len(),
            cfg.timesteps
        )));
    }
    if b == 0 {
        return Err(Error::Dataset("empty batch".into()));
    }
    if let Some((sample, &y)) = batch.labels.iter().enumerate().find(|(_, &y)| y >= net.classes()) {
        return Err(Error::LabelRange {
            sample,
            label: y as u32,
            classes: net.classes() as u32,
        });
    }
    Ok(b)
}

/// Errors, feedback, clipped gradients, and update for every layer.
fn learn_from(
    net: &mut Network,
    pred: &PredictionState,
    onehot: &IntTensor,
    cfg: &TrainConfig,
    counter: &mut OpCounter,
) -> Result<u64> {
    counter.set_phase(Phase::Backward);
    let error = compute_error(pred, onehot, cfg, counter)?;
    let abs_error = error.data().iter().map(|&e| e.unsigned_abs() as u64).sum();
    let last = net.num_layers() - 1;
    let out_lp = net.weights(last).lp().clone();
    let mut deltas = Vec::with_capacity(net.num_layers());
    for idx in 0..net.num_layers() {
        let delta = match net.layers().get(idx).expect("index in range") {
            Layer::Dense(d) => {
                let v_fb = if idx == last {
                    error.clone()
                } else {
                    hidden_feedback(&error, &out_lp, counter)?
                };
                batch_gradient(&v_fb, &d.state.t_corr, counter)?
            }
            Layer::Conv(c) => {
                let (oh, ow) = c.state.out_hw;
                let fb = hidden_feedback(&error, &out_lp, counter)?;
                let b = fb.shape()[0];
                let fb = fb.reshape(&[b, c.state.spec.out_channels, oh, ow])?;
                conv_batch_gradient(&fb, &c.state.trace, counter)?
            }
        };
        deltas.push(clip_gradient(&delta, cfg.clip));
    }
    counter.set_phase(Phase::Update);
    net.apply_updates(&deltas, counter)?;
    Ok(abs_error)
}

/// Forward `t_s` steps with traces, then one update from the accumulated
/// traces and output counts. State is reset at the start.
pub fn train_batch(
    net: &mut Network,
    batch: &EncodedBatch,
    cfg: &TrainConfig,
    counter: &mut OpCounter,
) -> Result<BatchOutcome> {
    let b = check_batch(net, batch, cfg)?;
    net.begin_batch(b)?;
    let onehot = one_hot(&batch.labels, net.classes())?;
    let mut pred = PredictionState::new(b, net.classes());
    let mut abs_error = 0;
    let mut predictions = None;
    for (t, frame) in batch.frames.iter().enumerate() {
        counter.set_phase(Phase::Forward);
        let steps = net.step(frame, true, counter)?;
        pred.accumulate(&steps.last().expect("at least one layer").spikes, counter)?;
        if cfg.schedule == UpdateSchedule::Step {
            if t + 1 == batch.frames.len() {
                predictions = Some(classify(&pred));
            }
            let partial = TrainConfig {
                timesteps: t + 1,
                ..cfg.clone()
            };
            abs_error = learn_from(net, &pred, &onehot, &partial, counter)?;
        }
    }
    let predictions = match predictions {
        Some(p) => p,
        None => {
            let p = classify(&pred);
            abs_error = learn_from(net, &pred, &onehot, cfg, counter)?;
            p
        }
    };
    counter.set_phase(Phase::Forward);
    let correct = predictions.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    Ok(BatchOutcome {
        samples: b,
        correct,
        abs_error,
        predictions,
    })
}

/// Inference-only forward pass on the current inference weights.
pub fn evaluate_batch(net: &mut Network, batch: &EncodedBatch, cfg: &TrainConfig) -> Result<BatchOutcome> {
    let b = check_batch(net, batch, cfg)?;
    net.begin_batch(b)?;
    let mut scratch = OpCounter::new();
    let mut pred = PredictionState::new(b, net.classes());
    for frame in &batch.frames {
        let steps = net.step(frame, false, &mut scratch)?;
        pred.accumulate(&steps.last().expect("at least one layer").spikes, &mut scratch)?;
    }
    let predictions = classify(&pred);
    let correct = predictions.iter().zip(&batch.labels).filter(|(p, y)| p == y).count();
    Ok(BatchOutcome {
        samples: b,
        correct,
        abs_error: 0,
        predictions,
    })
}

/// Metrics of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Σ |error| over the epoch.
    pub loss: u64,
    /// Training operations of the epoch (evaluation is not counted).
    pub ops: OpTally,
}

/// Seeded permutation used for one epoch.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[SHUFFLE_STREAM, epoch as u64]));
    order.shuffle(&mut rng);
    order
}

/// Test-set accuracy with frozen weights.
pub fn evaluate(net: &mut Network, data: &dyn SpikeDataset, cfg: &TrainConfig) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch = data.encode(chunk, cfg.timesteps, derive_seed(cfg.seed, &[TEST_ENCODE_STREAM]))?;
        correct += evaluate_batch(net, &batch, cfg)?.correct;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Train for `cfg.epochs` epochs, evaluating on `test` after each one.
///
/// `on_epoch` sees every record as soon as it is produced.
pub fn run_training(
    net: &mut Network,
    train: &dyn SpikeDataset,
    test: &dyn SpikeDataset,
    cfg: &TrainConfig,
    counter: &mut OpCounter,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = epoch_order(train.len(), cfg.seed, epoch);
        let mut epoch_counter = OpCounter::new();
        let (mut correct, mut seen, mut loss) = (0usize, 0usize, 0u64);
        for chunk in order.chunks(cfg.batch_size) {
            let enc_seed = derive_seed(cfg.seed, &[TRAIN_ENCODE_STREAM, epoch as u64]);
            let batch = train.encode(chunk, cfg.timesteps, enc_seed)?;
            let out = train_batch(net, &batch, cfg, &mut epoch_counter)?;
            correct += out.correct;
            seen += out.samples;
            loss += out.abs_error;
        }
        let test_acc = evaluate(net, test, cfg)?;
        counter.merge(&epoch_counter);
        let record = EpochRecord {
            epoch,
            train_acc: if seen == 0 { 0.0 } else { correct as f64 / seen as f64 },
            test_acc,
            loss,
            ops: epoch_counter.totals(),
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(counts: Vec<i32>, classes: usize) -> PredictionState {
        let b = counts.len() / classes;
        PredictionState {
            spike_counts: IntTensor::from_vec(&[b, classes], BitWidth::W32, counts).unwrap(),
        }
    }

    #[test]
    fn error_examples() {
        let cfg = TrainConfig::default();
        let y = one_hot(&[0], 2).unwrap();
        let e = compute_error(&pred(vec![7, 2], 2), &y, &cfg, &mut OpCounter::new()).unwrap();
        assert_eq!(e.data(), &[-4, 8]);

        let y = one_hot(&[0], 3).unwrap();
        let e = compute_error(&pred(vec![0, 0, 0], 3), &y, &cfg, &mut OpCounter::new()).unwrap();
        assert_eq!(e.data(), &[-32, 0, 0]);

        let cfg8 = TrainConfig {
            timesteps: 8,
            ..TrainConfig::default()
        };
        let e = compute_error(&pred(vec![8, 0], 2), &one_hot(&[0], 2).unwrap(), &cfg8, &mut OpCounter::new()).unwrap();
        assert_eq!(e.data()[0], 0);
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&pred(vec![0, 5, 2], 3)), vec![1]);
        assert_eq!(classify(&pred(vec![3, 3, 0], 3)), vec![0]);
        assert_eq!(classify(&pred(vec![0, 0, 0], 3)), vec![0]);
    }

    #[test]
    fn feedback_examples() {
        let e = IntTensor::from_vec(&[1, 2], BitWidth::W32, vec![3, -4]).unwrap();
        let eye = IntTensor::from_vec(&[2, 2], BitWidth::W8, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(hidden_feedback(&e, &eye, &mut OpCounter::new()).unwrap().data(), &[3, -4]);
        let z = IntTensor::zeros(&[1, 2], BitWidth::W32);
        let w = IntTensor::from_vec(&[2, 3], BitWidth::W8, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert!(hidden_feedback(&z, &w, &mut OpCounter::new()).unwrap().data().iter().all(|&x| x == 0));
        let bad = IntTensor::zeros(&[3, 2], BitWidth::W8);
        assert!(hidden_feedback(&e, &bad, &mut OpCounter::new()).is_err());
    }

    #[test]
    fn gradient_examples() {
        let fb = IntTensor::from_vec(&[1, 1], BitWidth::W32, vec![2]).unwrap();
        let tc = IntTensor::from_vec(&[1, 1, 2], BitWidth::W32, vec![3, 4]).unwrap();
        assert_eq!(batch_gradient(&fb, &tc, &mut OpCounter::new()).unwrap().data(), &[6, 8]);
        let zero = IntTensor::zeros(&[1, 1], BitWidth::W32);
        assert_eq!(batch_gradient(&zero, &tc, &mut OpCounter::new()).unwrap().data(), &[0, 0]);
    }

    #[test]
    fn one_hot_rejects_large_label() {
        assert!(matches!(one_hot(&[3], 3), Err(Error::LabelRange { .. })));
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(50, 3, 0);
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(50, 3, 0));
        assert_ne!(a, epoch_order(50, 3, 1));
    }
}
