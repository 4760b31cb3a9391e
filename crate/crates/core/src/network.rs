//! Layer stacks for the three supported architectures.

use crate::config::{Architecture, NetConfig, TrainConfig};
use crate::conv::{kernel_columns, ConvLayerState, ConvSpec};
use crate::cost::OpCounter;
use crate::error::{Error, Result};
use crate::neuron::{transpose, LayerStep, LifLayerState};
use crate::recurrent::{sample_recurrent_init, RecurrentWeights};
use crate::tensor::IntTensor;
use crate::weights::{sample_uniform_init, MixedPrecisionLayerWeights, UpdateParams};

/// splitmix64 finalizer folded over a list of stream identifiers.
pub fn derive_seed(base: u64, streams: &[u64]) -> u64 {
    let mut z = base;
    for &s in streams {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(s);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const INIT_STREAM: u64 = 0x1417;
const RECURRENT_STREAM: u64 = 0x7ec;

#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: MixedPrecisionLayerWeights,
    /// `[inputs, neurons]` copy of the inference weights.
    lp_t: Vec<i32>,
    pub state: LifLayerState,
    pub recurrent: Option<RecurrentWeights>,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub weights: MixedPrecisionLayerWeights,
    /// `[patch, Ch_out]` copy of the inference kernel.
    kcols: Vec<i32>,
    pub state: ConvLayerState,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(ConvLayer),
}

impl Layer {
    pub fn weights(&self) -> &MixedPrecisionLayerWeights {
        match self {
            Layer::Dense(d) => &d.weights,
            Layer::Conv(c) => &c.weights,
        }
    }

    /// Postsynaptic neurons per sample.
    pub fn neurons(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weights.shape()[0],
            Layer::Conv(c) => c.state.spec.out_channels * c.state.out_hw.0 * c.state.out_hw.1,
        }
    }

    fn refresh_cache(&mut self) {
        match self {
            Layer::Dense(d) => {
                let [n, i] = [d.weights.shape()[0], d.weights.shape()[1]];
                d.lp_t = transpose(d.weights.lp().data(), n, i);
            }
            Layer::Conv(c) => c.kcols = kernel_columns(c.weights.lp().data(), &c.state.spec),
        }
    }

    fn weights_mut(&mut self) -> &mut MixedPrecisionLayerWeights {
        match self {
            Layer::Dense(d) => &mut d.weights,
            Layer::Conv(c) => &mut c.weights,
        }
    }

    fn batch(&self) -> usize {
        match self {
            Layer::Dense(d) => d.state.batch(),
            Layer::Conv(c) => c.state.batch(),
        }
    }

    fn step(&mut self, input: &IntTensor, learn: bool, counter: &mut OpCounter) -> Result<LayerStep> {
        match self {
            Layer::Dense(d) => match &d.recurrent {
                Some(rec) => {
                    let extra = rec.current(&d.state.v, counter);
                    d.state.step_with(&d.lp_t, input, Some(&extra), learn, counter)
                }
                None => d.state.step_with(&d.lp_t, input, None, learn, counter),
            },
            Layer::Conv(c) => {
                let out = c.state.step_with(&c.kcols, input, learn, counter)?;
                let b = c.state.batch();
                let n = out.spikes.len() / b.max(1);
                Ok(LayerStep {
                    spikes: out.spikes.reshape(&[b, n])?,
                    surrogate: out.surrogate,
                })
            }
        }
    }
}

/// A network plus its per-batch state.
#[derive(Debug, Clone)]
pub struct Network {
    config: NetConfig,
    layers: Vec<Layer>,
}

struct LayerPlan {
    shape: Vec<usize>,
    fan_in: usize,
}

fn plan(cfg: &NetConfig) -> Vec<LayerPlan> {
    let inputs = cfg.input_elements();
    let dense = |n: usize, i: usize| LayerPlan {
        shape: vec![n, i],
        fan_in: i,
    };
    match cfg.architecture {
        Architecture::Fc if cfg.hidden == 0 => vec![dense(cfg.classes, inputs)],
        Architecture::Fc | Architecture::Recurrent => {
            vec![dense(cfg.hidden, inputs), dense(cfg.classes, cfg.hidden)]
        }
        Architecture::Conv => {
            let spec = cfg.conv.expect("validated");
            let (_, h, w) = cfg.image_dims().expect("validated");
            let (oh, ow) = spec.output_dims(h, w).expect("validated");
            vec![
                LayerPlan {
                    shape: spec.weight_shape().to_vec(),
                    fan_in: spec.patch_len(),
                },
                dense(cfg.classes, spec.out_channels * oh * ow),
            ]
        }
    }
}

impl Network {
    /// Build a network with freshly initialized weights.
    ///
    /// All trainable layers are drawn first; their joint maximum magnitude
    /// sets the quantization scale for every layer, including the fixed
    /// recurrent matrix.
    pub fn new(cfg: &NetConfig, train: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        train.validate()?;
        let plans = plan(cfg);
        let reals: Vec<Vec<f64>> = plans
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let len = p.shape.iter().product();
                sample_uniform_init(len, p.fan_in, derive_seed(train.seed, &[INIT_STREAM, i as u64]))
            })
            .collect();
        let global_max = reals.iter().flatten().fold(0.0f64, |m, w| m.max(w.abs()));
        if global_max <= 0.0 {
            return Err(Error::InvalidParameter("initial weights are all zero".into()));
        }
        let mut weights = Vec::with_capacity(plans.len());
        for (i, (p, real)) in plans.iter().zip(&reals).enumerate() {
            let lp = &cfg.layers[i];
            let update = UpdateParams {
                eta_shift: lp.eta_shift,
                decay_shift: lp.decay_shift,
                clip: train.clip,
            };
            weights.push(MixedPrecisionLayerWeights::from_real(
                &p.shape,
                real,
                cfg.shadow_width(),
                cfg.infer_width(),
                global_max,
                update,
            )?);
        }
        let recurrent = if cfg.architecture == Architecture::Recurrent {
            let real = sample_recurrent_init(cfg.hidden, derive_seed(train.seed, &[RECURRENT_STREAM]));
            Some(RecurrentWeights::from_real(cfg.hidden, &real, cfg.infer_width(), global_max)?)
        } else {
            None
        };
        Self::from_weights(cfg, weights, recurrent)
    }

    /// Assemble a network around existing weights (e.g. a loaded checkpoint).
    pub fn from_weights(
        cfg: &NetConfig,
        weights: Vec<MixedPrecisionLayerWeights>,
        recurrent: Option<RecurrentWeights>,
    ) -> Result<Self> {
        cfg.validate()?;
        let plans = plan(cfg);
        if weights.len() != plans.len() {
            return Err(Error::Config(format!(
                "expected {} weight tensors, got {}",
                plans.len(),
                weights.len()
            )));
        }
        for (w, p) in weights.iter().zip(&plans) {
            if w.shape() != p.shape.as_slice() {
                return Err(Error::shape(w.shape(), &p.shape, "layer weights"));
            }
            if w.shadow_bits() != cfg.shadow_width() || w.lp_bits() != cfg.infer_width() {
                return Err(Error::Config(format!(
                    "weight widths {}/{} do not match config {}/{}",
                    w.shadow_bits(),
                    w.lp_bits(),
                    cfg.shadow_bits,
                    cfg.infer_bits
                )));
            }
        }
        match (&recurrent, cfg.architecture) {
            (Some(r), Architecture::Recurrent) if r.neurons() == cfg.hidden => {}
            (None, a) if a != Architecture::Recurrent => {}
            _ => return Err(Error::Config("recurrent weights do not match the architecture".into())),
        }

        let vw = cfg.voltage_width();
        let mut recurrent = recurrent;
        let mut layers = Vec::with_capacity(weights.len());
        for (i, w) in weights.into_iter().enumerate() {
            let params = cfg.layers[i].lif()?;
            let layer = if cfg.architecture == Architecture::Conv && i == 0 {
                let spec: ConvSpec = cfg.conv.expect("validated");
                let (_, h, wd) = cfg.image_dims()?;
                Layer::Conv(ConvLayer {
                    kcols: Vec::new(),
                    state: ConvLayerState::new(0, spec, (h, wd), params, vw)?,
                    weights: w,
                })
            } else {
                let (n, inp) = (w.shape()[0], w.shape()[1]);
                Layer::Dense(DenseLayer {
                    lp_t: Vec::new(),
                    state: LifLayerState::new(0, n, inp, params, vw),
                    recurrent: if i == 0 { recurrent.take() } else { None },
                    weights: w,
                })
            };
            layers.push(layer);
        }
        let mut net = Network {
            config: cfg.clone(),
            layers,
        };
        for l in net.layers.iter_mut() {
            l.refresh_cache();
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn weights(&self, layer: usize) -> &MixedPrecisionLayerWeights {
        self.layers[layer].weights()
    }

    pub fn recurrent(&self) -> Option<&RecurrentWeights> {
        match self.layers.first() {
            Some(Layer::Dense(d)) => d.recurrent.as_ref(),
            _ => None,
        }
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// Current batch size of the allocated state (0 before the first batch).
    pub fn batch(&self) -> usize {
        self.layers.first().map_or(0, Layer::batch)
    }

    /// Zero all neuron state, reallocating if the batch size changed.
    pub fn begin_batch(&mut self, batch: usize) -> Result<()> {
        let vw = self.config.voltage_width();
        for layer in self.layers.iter_mut() {
            if layer.batch() == batch {
                match layer {
                    Layer::Dense(d) => d.state.reset_state(),
                    Layer::Conv(c) => c.state.reset_state(),
                }
                continue;
            }
            match layer {
                Layer::Dense(d) => {
                    let (n, i) = (d.state.neurons(), d.state.inputs());
                    d.state = LifLayerState::new(batch, n, i, d.state.params, vw);
                }
                Layer::Conv(c) => {
                    c.state = ConvLayerState::new(batch, c.state.spec, c.state.in_hw, c.state.params, vw)?;
                }
            }
        }
        Ok(())
    }

    /// One timestep through every layer. `input` is `[B, input_elements]`.
    /// Returns the per-layer steps, output layer last.
    pub fn step(&mut self, input: &IntTensor, learn: bool, counter: &mut OpCounter) -> Result<Vec<LayerStep>> {
        let b = self.batch();
        if input.shape() != [b, self.config.input_elements()] {
            return Err(Error::shape(input.shape(), &[b, self.config.input_elements()], "network input"));
        }
        let mut steps: Vec<LayerStep> = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter_mut() {
            let x = steps.last().map_or(input, |s| &s.spikes);
            let out = layer.step(x, learn, counter)?;
            steps.push(out);
        }
        Ok(steps)
    }

    /// Apply clipped gradients to every layer and refresh the inference copies.
    pub fn apply_updates(&mut self, deltas: &[IntTensor], counter: &mut OpCounter) -> Result<()> {
        if deltas.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "expected {} gradients, got {}",
                self.layers.len(),
                deltas.len()
            )));
        }
        for (layer, d) in self.layers.iter_mut().zip(deltas) {
            let d = d.clone().reshape(layer.weights().shape())?;
            layer.weights_mut().apply_update(&d, counter)?;
            layer.refresh_cache();
        }
        Ok(())
    }

    /// Change η̂/ρ̂/Δ_max of one layer.
    pub fn set_update_params(&mut self, layer: usize, update: UpdateParams) -> Result<()> {
        self.layers[layer].weights_mut().set_update_params(update)
    }

    /// All trainable weights, input side first.
    pub fn all_weights(&self) -> Vec<&MixedPrecisionLayerWeights> {
        self.layers.iter().map(Layer::weights).collect()
    }
}
