//! JSON run configuration. Every field is optional and falls back to the
//! desk-scale defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spkadapt_core::network::{NetworkConfig, SamplingMode};
use spkadapt_core::strategies::RegistryOptions;
use spkadapt_core::synthcorpus::CorpusConfig;
use spkadapt_core::trainer::{AdamConfig, AdaptOptions, TrainRun};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub seed: u64,
    pub d_x: usize,
    pub d_y: usize,
    pub n_base_speakers: usize,
    pub base_utterances: usize,
    pub base_valid: usize,
    pub n_target_speakers: usize,
    pub target_adapt: usize,
    pub target_valid: usize,
    pub target_test: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub segment_min: usize,
    pub segment_max: usize,
    pub silence_prob: f64,
    pub phone_noise: f64,
    pub noise: f64,
    pub g_hidden: usize,
    pub scale_spread: f64,
    pub bias_spread: f64,
    pub mixing_radius: f64,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self::from(&CorpusConfig::default())
    }
}

impl From<&CorpusConfig> for CorpusSection {
    fn from(c: &CorpusConfig) -> Self {
        CorpusSection {
            seed: c.seed,
            d_x: c.d_x,
            d_y: c.d_y,
            n_base_speakers: c.n_base_speakers,
            base_utterances: c.base_utterances,
            base_valid: c.base_valid,
            n_target_speakers: c.n_target_speakers,
            target_adapt: c.target_adapt,
            target_valid: c.target_valid,
            target_test: c.target_test,
            t_min: c.t_min,
            t_max: c.t_max,
            segment_min: c.segment_min,
            segment_max: c.segment_max,
            silence_prob: c.silence_prob,
            phone_noise: c.phone_noise,
            noise: c.noise,
            g_hidden: c.g_hidden,
            scale_spread: c.scale_spread,
            bias_spread: c.bias_spread,
            mixing_radius: c.mixing_radius,
        }
    }
}

impl From<&CorpusSection> for CorpusConfig {
    fn from(c: &CorpusSection) -> Self {
        CorpusConfig {
            seed: c.seed,
            d_x: c.d_x,
            d_y: c.d_y,
            n_base_speakers: c.n_base_speakers,
            base_utterances: c.base_utterances,
            base_valid: c.base_valid,
            n_target_speakers: c.n_target_speakers,
            target_adapt: c.target_adapt,
            target_valid: c.target_valid,
            target_test: c.target_test,
            t_min: c.t_min,
            t_max: c.t_max,
            segment_min: c.segment_min,
            segment_max: c.segment_max,
            silence_prob: c.silence_prob,
            phone_noise: c.phone_noise,
            noise: c.noise,
            g_hidden: c.g_hidden,
            scale_spread: c.scale_spread,
            bias_spread: c.bias_spread,
            mixing_radius: c.mixing_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub d_x: usize,
    pub d_y: usize,
    pub d_z: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub encoder_conv_block: Vec<usize>,
    pub decoder_conv_blocks: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self::from(&NetworkConfig::desk_scale())
    }
}

impl From<&NetworkConfig> for NetworkSection {
    fn from(c: &NetworkConfig) -> Self {
        NetworkSection {
            d_x: c.d_x,
            d_y: c.d_y,
            d_z: c.d_z,
            encoder_hidden: c.encoder_hidden,
            decoder_hidden: c.decoder_hidden,
            encoder_conv_block: c.encoder_conv_block.clone(),
            decoder_conv_blocks: c.decoder_conv_blocks.clone(),
        }
    }
}

impl NetworkSection {
    /// The deterministic-latent flag comes from the strategy, not the config.
    pub fn to_network(&self) -> NetworkConfig {
        NetworkConfig {
            d_x: self.d_x,
            d_y: self.d_y,
            d_z: self.d_z,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
            encoder_conv_block: self.encoder_conv_block.clone(),
            decoder_conv_blocks: self.decoder_conv_blocks.clone(),
            deterministic_latent: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Reparameterized,
    Mean,
}

impl From<Sampling> for SamplingMode {
    fn from(s: Sampling) -> Self {
        match s {
            Sampling::Reparameterized => SamplingMode::Reparameterized,
            Sampling::Mean => SamplingMode::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub beta: f64,
    pub sampling: Sampling,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
}

/// Initial-model learning rate for the desk network; adaptation keeps 1e-3.
pub const DESK_TRAIN_LR: f64 = 3e-3;

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainRun::default();
        TrainSection {
            max_epochs: d.max_epochs,
            patience: d.patience,
            beta: d.beta,
            sampling: Sampling::Reparameterized,
            lr: DESK_TRAIN_LR,
            beta1: d.optimizer.beta1,
            beta2: d.optimizer.beta2,
            eps: d.optimizer.eps,
            clip: d.optimizer.clip,
        }
    }
}

impl TrainSection {
    pub fn to_run(&self, seed: u64) -> TrainRun {
        TrainRun {
            max_epochs: self.max_epochs,
            patience: self.patience,
            beta: self.beta,
            mode: self.sampling.into(),
            seed,
            optimizer: AdamConfig {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                clip: self.clip,
            },
        }
    }
}

/// Same knobs as [`TrainSection`] plus the validation carve-out size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub sampling: Sampling,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    /// Validation utterances carved from the pool when no separate
    /// validation set exists.
    pub n_valid: usize,
}

impl Default for AdaptSection {
    fn default() -> Self {
        let t = TrainSection::default();
        AdaptSection {
            max_epochs: t.max_epochs,
            patience: t.patience,
            sampling: t.sampling,
            lr: TrainRun::default().optimizer.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            clip: t.clip,
            n_valid: AdaptOptions::default().n_valid,
        }
    }
}

impl AdaptSection {
    pub fn to_run(&self, seed: u64) -> TrainRun {
        TrainSection {
            max_epochs: self.max_epochs,
            patience: self.patience,
            beta: 0.0,
            sampling: self.sampling,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            clip: self.clip,
        }
        .to_run(seed)
    }

    pub fn options(&self) -> AdaptOptions {
        AdaptOptions { n_valid: self.n_valid }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrySection {
    pub ad_a1bb_single_code: bool,
}

impl From<&RegistrySection> for RegistryOptions {
    fn from(r: &RegistrySection) -> Self {
        RegistryOptions {
            ad_a1bb_single_code: r.ad_a1bb_single_code,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub adapt: AdaptSection,
    pub registry: RegistrySection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> CliResult<RunConfig> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", origin.display())))
    }

    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Loads `path` or returns the defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<RunConfig> {
        path.map_or_else(|| Ok(RunConfig::default()), Self::load)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_partial_override() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_json(), Path::new("c")).unwrap();
        assert_eq!(back, c);
        let p = RunConfig::parse(r#"{"train": {"lr": 0.01}, "adapt": {"n_valid": 2, "patience": 3}}"#, Path::new("c")).unwrap();
        assert_eq!(p.train.lr, 0.01);
        assert_eq!(p.train.patience, 5);
        assert_eq!((p.adapt.n_valid, p.adapt.patience), (2, 3));
        assert_eq!(CorpusConfig::from(&p.corpus), CorpusConfig::default());
    }

    #[test]
    fn unknown_fields_are_usage_errors() {
        let e = RunConfig::parse(r#"{"trian": {}}"#, Path::new("c")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
