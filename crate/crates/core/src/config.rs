//! Run-level configuration: every module's settings plus the global seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::AdapterConfig;
use crate::decoder::{AdapterTrainConfig, BackboneTrainConfig, DecoderConfig, SamplerConfig};
use crate::error::{Error, Result};
use crate::longform::WindowConfig;
use crate::probe::{BackboneConfig, ProbeConfig};
use crate::rng::derive_seed;
use crate::synth::{CodecSpec, CorpusConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Seconds per window when scoring affect alignment.
    pub alignment_window_s: usize,
    /// Held-out arcs scored by `generate`/`ablate`.
    pub held_out_arcs: usize,
    pub held_out_duration_s: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alignment_window_s: 5,
            held_out_arcs: 20,
            held_out_duration_s: 30,
        }
    }
}

/// Subdirectories of the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub data: String,
    pub weights: String,
    pub generated: String,
    pub eval: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: "data".into(),
            weights: "weights".into(),
            generated: "generated".into(),
            eval: "eval".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Global seed; every module seed below is mixed with it.
    pub seed: u64,
    pub codec: CodecSpec,
    pub corpus: CorpusConfig,
    pub probe_backbone: BackboneConfig,
    pub probe: ProbeConfig,
    pub decoder: DecoderConfig,
    pub adapter: AdapterConfig,
    pub backbone_train: BackboneTrainConfig,
    pub adapter_train: AdapterTrainConfig,
    pub sampler: SamplerConfig,
    pub windows: WindowConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let codec = CodecSpec::default();
        RunConfig {
            seed: 0,
            codec,
            corpus: CorpusConfig::default(),
            probe_backbone: BackboneConfig::default(),
            probe: ProbeConfig::default(),
            decoder: DecoderConfig::default().for_codec(&codec),
            adapter: AdapterConfig::default(),
            backbone_train: BackboneTrainConfig::default(),
            adapter_train: AdapterTrainConfig::default(),
            sampler: SamplerConfig::default(),
            windows: WindowConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Checks cross-module consistency.
    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.decoder.validate()?;
        self.sampler.validate(self.codec.vocab_size)?;
        self.windows.validate()?;
        self.probe.validate()?;
        if self.decoder.num_codebooks != self.codec.num_codebooks || self.decoder.vocab_size != self.codec.vocab_size + 1 {
            return Err(Error::Config("decoder vocabulary does not match the codec (vocab + pad)".into()));
        }
        if self.adapter.dim != self.decoder.dim {
            return Err(Error::Config(format!(
                "adapter dim {} must equal decoder dim {}",
                self.adapter.dim, self.decoder.dim
            )));
        }
        let context = (self.windows.window_s + self.windows.prefix_s) * self.codec.tokens_per_second
            + self.codec.num_codebooks
            - 1;
        if context > self.decoder.max_context {
            return Err(Error::Config(format!(
                "window plus prefix needs {context} decoder steps but max_context is {}",
                self.decoder.max_context
            )));
        }
        if self.eval.alignment_window_s == 0 {
            return Err(Error::Config("alignment window must be >= 1 s".into()));
        }
        Ok(())
    }

    /// Copy with every module seed mixed with the global seed.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        let mix = |tag: u64, s: u64| derive_seed(self.seed, &[tag, s]);
        c.probe_backbone.seed = mix(1, c.probe_backbone.seed);
        c.probe.rng_seed = mix(2, c.probe.rng_seed);
        c.decoder.seed = mix(3, c.decoder.seed);
        c.backbone_train.seed = mix(4, c.backbone_train.seed);
        c.adapter_train.seed = mix(5, c.adapter_train.seed);
        c.sampler.rng_seed = mix(6, c.sampler.rng_seed);
        c
    }

    /// Seed for corpus generation.
    pub fn corpus_seed(&self) -> u64 {
        derive_seed(self.seed, &[0xC0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = RunConfig::from_toml("seed = 9\n[decoder]\ninjection_ratio = 0.5\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.decoder.injection_ratio, 0.5);
        assert_eq!(c.decoder.layers, DecoderConfig::default().layers);
    }

    #[test]
    fn inconsistent_configs_are_rejected() {
        let mut c = RunConfig::default();
        c.adapter.dim = 32;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.decoder.injection_ratio = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.decoder.max_context = 100;
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml("seed = \"x\"").is_err());
    }

    #[test]
    fn seeds_depend_on_the_global_seed() {
        let a = RunConfig { seed: 1, ..Default::default() }.resolved();
        let b = RunConfig { seed: 2, ..Default::default() }.resolved();
        assert_ne!(a.decoder.seed, b.decoder.seed);
        assert_eq!(a, RunConfig { seed: 1, ..Default::default() }.resolved());
    }
}
