//! Network and training configuration.

use serde::{Deserialize, Serialize};

use crate::conv::ConvSpec;
use crate::cost::LayerGeometry;
use crate::error::{Error, Result};
use crate::neuron::LifParams;
use crate::tensor::BitWidth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// input → hidden LIF → output LIF
    Fc,
    /// input → strided conv LIF → output LIF
    Conv,
    /// input → hidden LIF with fixed random recurrence → output LIF
    Recurrent,
}

/// Neuron and update parameters of one trainable layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub v_th: i32,
    pub grad_win: i32,
    pub beta_shift: u32,
    pub eta_shift: u32,
    pub decay_shift: u32,
}

impl LayerParams {
    pub fn lif(&self) -> Result<LifParams> {
        LifParams::new(self.v_th, self.grad_win, self.beta_shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UpdateSchedule {
    /// One weight update after the last timestep of each batch.
    #[default]
    Sequence,
    /// Experimental: update after every timestep from the running counts.
    Step,
}

/// Architecture, shapes, and bit widths of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub architecture: Architecture,
    /// `[C, H, W]` for image input, `[I]` for flat input.
    pub input_shape: Vec<usize>,
    /// Largest value an input element can take (1 for binary spikes).
    pub input_max: u32,
    /// Hidden neurons for `Fc`/`Recurrent`. Zero gives a single-layer `Fc` net.
    pub hidden: usize,
    pub conv: Option<ConvSpec>,
    pub classes: usize,
    pub shadow_bits: u32,
    pub infer_bits: u32,
    pub voltage_bits: u32,
    /// One entry per trainable layer, output layer last.
    pub layers: Vec<LayerParams>,
}

/// Training schedule and loss parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainConfig {
    /// Loss precision α.
    pub alpha: i32,
    /// Timesteps per sample.
    pub timesteps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient clip Δ_max.
    pub clip: i32,
    pub schedule: UpdateSchedule,
}

impl TrainConfig {
    /// ⌊log₂ t_s⌋
    pub fn ts_shift(&self) -> u32 {
        usize::BITS - 1 - self.timesteps.leading_zeros()
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0 {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.timesteps == 0 {
            return Err(Error::Config("timesteps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.clip <= 0 {
            return Err(Error::Config(format!("clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 32,
            timesteps: 10,
            batch_size: 128,
            epochs: 50,
            seed: 0,
            clip: 1 << 10,
            schedule: UpdateSchedule::Sequence,
        }
    }
}

impl NetConfig {
    pub fn shadow_width(&self) -> BitWidth {
        BitWidth::new(self.shadow_bits).expect("validated")
    }

    pub fn infer_width(&self) -> BitWidth {
        BitWidth::new(self.infer_bits).expect("validated")
    }

    pub fn voltage_width(&self) -> BitWidth {
        BitWidth::new(self.voltage_bits).expect("validated")
    }

    pub fn input_elements(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Number of trainable layers implied by the architecture.
    pub fn trainable_layers(&self) -> usize {
        match self.architecture {
            Architecture::Fc if self.hidden == 0 => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, bits) in [
            ("shadow_bits", self.shadow_bits),
            ("infer_bits", self.infer_bits),
            ("voltage_bits", self.voltage_bits),
        ] {
            BitWidth::new(bits).map_err(|_| Error::Config(format!("{name} = {bits} outside 2..=32")))?;
        }
        if self.infer_bits > self.shadow_bits {
            return Err(Error::Config(format!(
                "infer_bits ({}) must not exceed shadow_bits ({})",
                self.infer_bits, self.shadow_bits
            )));
        }
        if self.architecture == Architecture::Recurrent && self.voltage_bits < 16 {
            return Err(Error::Config("recurrent nets need voltage_bits >= 16".into()));
        }
        if self.classes == 0 {
            return Err(Error::Config("classes must be at least 1".into()));
        }
        if self.input_elements() == 0 {
            return Err(Error::Config("input shape has no elements".into()));
        }
        match self.architecture {
            Architecture::Conv => {
                let spec = self
                    .conv
                    .ok_or_else(|| Error::Config("conv architecture needs a [model.conv] section".into()))?;
                let (c, h, w) = self.image_dims()?;
                if c != spec.in_channels {
                    return Err(Error::Config(format!(
                        "conv in_channels {} does not match input channels {c}",
                        spec.in_channels
                    )));
                }
                spec.output_dims(h, w)?;
            }
            Architecture::Recurrent if self.hidden == 0 => {
                return Err(Error::Config("recurrent nets need hidden > 0".into()));
            }
            _ => {}
        }
        if self.layers.len() != self.trainable_layers() {
            return Err(Error::Config(format!(
                "expected {} [[layers]] entries, found {}",
                self.trainable_layers(),
                self.layers.len()
            )));
        }
        for (i, p) in self.layers.iter().enumerate() {
            p.lif().map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
            if p.eta_shift >= 32 || p.decay_shift >= 32 {
                return Err(Error::Config(format!("layer {i}: shifts must be < 32")));
            }
        }
        Ok(())
    }

    pub(crate) fn image_dims(&self) -> Result<(usize, usize, usize)> {
        match self.input_shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            other => Err(Error::Config(format!(
                "conv architecture needs [C, H, W] input, got {other:?}"
            ))),
        }
    }

    /// Shapes of the trainable layers, input side first.
    pub fn layer_geometries(&self) -> Vec<LayerGeometry> {
        let inputs = self.input_elements() as u64;
        let classes = self.classes as u64;
        let dense = |n: u64, i: u64, recurrent: bool| LayerGeometry {
            neurons: n,
            inputs: i,
            pre_elements: i,
            corr_elements: n * i,
            weight_elements: n * i,
            forward_macs: n * i,
            recurrent,
        };
        match self.architecture {
            Architecture::Fc if self.hidden == 0 => vec![dense(classes, inputs, false)],
            Architecture::Fc | Architecture::Recurrent => {
                let h = self.hidden as u64;
                vec![
                    dense(h, inputs, self.architecture == Architecture::Recurrent),
                    dense(classes, h, false),
                ]
            }
            Architecture::Conv => {
                let spec = self.conv.expect("validated");
                let (_, h, w) = self.image_dims().expect("validated");
                let (oh, ow) = spec.output_dims(h, w).expect("validated");
                let patch = (spec.in_channels * spec.kernel * spec.kernel) as u64;
                let positions = (oh * ow) as u64;
                let co = spec.out_channels as u64;
                let conv = LayerGeometry {
                    neurons: co * positions,
                    inputs,
                    pre_elements: inputs,
                    corr_elements: co * positions * patch,
                    weight_elements: co * patch,
                    forward_macs: co * positions * patch,
                    recurrent: false,
                };
                vec![conv, dense(classes, co * positions, false)]
            }
        }
    }
}
