//! Autoregressive multi-codebook decoder with anchor cross-attention and gated
//! additive injection of the control signal into the shallow layers:
//! `h' = h + γ_l · C_t` for `l < ⌈ρL⌉`.

mod loss;
mod model;
mod sample;
mod train;

pub use loss::{gen_loss, gen_loss_with_grad};
pub use model::{
    inject, shift_inputs, AcousticDecoder, DecodeState, ForwardCache, InputGrads, Injection, Logits,
};
pub use sample::{sample, SampleOutput, SamplerConfig};
pub use train::{
    clip_example, evaluate_ce, pretrain_backbone, train_adapter, AdapterTrainConfig, BackboneTrainConfig, ClipExample,
    PretrainResult, TrainedControl,
};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, AdapterParams};
use crate::anchor::AnchorEncoder;
use crate::error::{Error, Result};
use crate::params::{join, Params, Visit, VisitMut};
use crate::rng::{derive_seed, rng_from};
use crate::synth::CodecSpec;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub num_codebooks: usize,
    /// Logit width per codebook: codec vocabulary plus the pad id.
    pub vocab_size: usize,
    pub max_context: usize,
    /// Fraction ρ of layers (from the bottom) that receive the control signal.
    pub injection_ratio: f64,
    /// Share one γ across all injected layers.
    pub tie_gates: bool,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            layers: 8,
            dim: 128,
            heads: 4,
            num_codebooks: 4,
            vocab_size: 65,
            max_context: 512,
            injection_ratio: 0.75,
            tie_gates: false,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    /// Sets the codebook count and logit width from `codec`.
    pub fn for_codec(self, codec: &CodecSpec) -> Self {
        DecoderConfig {
            num_codebooks: codec.num_codebooks,
            vocab_size: codec.vocab_size + 1,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.injection_ratio > 0.0 && self.injection_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "injection_ratio must lie in (0, 1], got {}",
                self.injection_ratio
            )));
        }
        if self.layers == 0 || self.dim == 0 || self.num_codebooks == 0 || self.max_context == 0 {
            return Err(Error::Config("decoder sizes must be positive".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!("heads {} must divide dim {}", self.heads, self.dim)));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("decoder vocab must hold at least one token and the pad".into()));
        }
        Ok(())
    }

    /// `⌈ρ·L⌉`.
    pub fn shallow_layers(&self) -> usize {
        let x = self.injection_ratio * self.layers as f64;
        // Guard against products such as 0.7 × 10 = 7.000000000000001.
        ((x - 1e-9).ceil() as usize).clamp(1, self.layers)
    }

    pub fn pad_token(&self) -> u16 {
        (self.vocab_size - 1) as u16
    }
}

/// One gate per injected layer (or one shared gate), initialized to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams<T> {
    pub gamma: Array1<T>,
    pub injected_layers: usize,
}

impl<T: Scalar> GateParams<T> {
    pub fn new(config: &DecoderConfig) -> Self {
        let n = config.shallow_layers();
        GateParams {
            gamma: Array1::zeros(if config.tie_gates { 1 } else { n }),
            injected_layers: n,
        }
    }

    pub fn is_tied(&self) -> bool {
        self.gamma.len() == 1 && self.injected_layers > 1
    }

    /// Gate of layer `l`, or `None` above the shallow stack.
    pub fn gate(&self, layer: usize) -> Option<T> {
        if layer >= self.injected_layers {
            None
        } else if self.is_tied() {
            Some(self.gamma[0])
        } else {
            Some(self.gamma[layer])
        }
    }

    pub fn slot(&self, layer: usize) -> usize {
        if self.is_tied() {
            0
        } else {
            layer
        }
    }
}

impl<T: Scalar> Params<T> for GateParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        f(&join(prefix, "gamma"), self.gamma.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        f(&join(prefix, "gamma"), self.gamma.view_mut().into_dyn());
    }
}

/// The pretrained music model: decoder plus the anchor encoder feeding its
/// cross-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone<T> {
    pub decoder: AcousticDecoder<T>,
    pub anchor: AnchorEncoder<T>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new(config: DecoderConfig) -> Result<Self> {
        config.validate()?;
        let decoder = AcousticDecoder::new(config)?;
        let anchor = AnchorEncoder::new(&mut rng_from(derive_seed(config.seed, &[0xA1])), config.dim);
        Ok(Backbone { decoder, anchor })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.decoder.config
    }
}

impl<T: Scalar> Params<T> for Backbone<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        self.decoder.visit(&join(prefix, "decoder"), f);
        self.anchor.visit(&join(prefix, "anchor"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
        self.anchor.visit_mut(&join(prefix, "anchor"), f);
    }
}

/// Trainable control branch: the adapter φ and the gates γ.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBranch<T> {
    pub adapter: AdapterParams<T>,
    pub gates: GateParams<T>,
}

impl<T: Scalar> ControlBranch<T> {
    pub fn new(decoder: &DecoderConfig, adapter: &AdapterConfig, seed: u64) -> Result<Self> {
        if adapter.dim != decoder.dim {
            return Err(Error::Config(format!(
                "adapter dim {} must equal decoder dim {}",
                adapter.dim, decoder.dim
            )));
        }
        Ok(ControlBranch {
            adapter: AdapterParams::new(&mut rng_from(derive_seed(seed, &[0xAD])), adapter),
            gates: GateParams::new(decoder),
        })
    }
}

impl<T: Scalar> Params<T> for ControlBranch<T> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, T>) {
        self.adapter.visit(&join(prefix, "adapter"), f);
        self.gates.visit(&join(prefix, "gates"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, T>) {
        self.adapter.visit_mut(&join(prefix, "adapter"), f);
        self.gates.visit_mut(&join(prefix, "gates"), f);
    }
}
