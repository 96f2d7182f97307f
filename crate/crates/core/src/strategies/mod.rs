//! Named speaker-adaptation strategies: where speaker components live, how
//! large they are, and what is trained when a new speaker arrives.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{BiasForm, HostComponents, HostLayer, ScaleForm, SpeakerId, SpeakerInit};
use crate::network::{ModelParameters, NetworkConfig, ParamGroup};
use crate::rng::SeededRng;

/// Hidden width at which the code dimensions below are quoted.
pub const REFERENCE_WIDTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub hosts: Vec<HostLayer>,
    /// Code sizes are given at [`REFERENCE_WIDTH`] and rescaled with the
    /// decoder width.
    pub bias: Option<BiasForm>,
    pub scale: Option<ScaleForm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptPlan {
    /// Train fresh components for the new speaker; everything else frozen.
    ComponentsOnly,
    /// Drop all speaker components and fine-tune every decoder weight.
    StripAndFinetuneAll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialModel {
    SpeakerAware,
    /// Deterministic-latent model whose training set includes the targets.
    MultiSpeakerBaseline,
    /// Deterministic-latent model adapted to unseen targets.
    DeterministicBaseline,
}

impl InitialModel {
    pub fn deterministic(self) -> bool {
        !matches!(self, InitialModel::SpeakerAware)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategySpec {
    pub name: String,
    pub placements: Vec<Placement>,
    pub adapt_plan: AdaptPlan,
    pub initial_model: InitialModel,
}

/// Registry switches for constructions the tables leave ambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegistryOptions {
    /// Model AD-A1bB as a single 256-dim bias code instead of a 128-dim code
    /// plus 128 free bias units.
    pub ad_a1bb_single_code: bool,
}

fn bs() -> Vec<HostLayer> {
    HostLayer::all_conv().collect()
}

fn entry(
    name: &str,
    hosts: Vec<HostLayer>,
    bias: Option<BiasForm>,
    scale: Option<ScaleForm>,
    adapt_plan: AdaptPlan,
    initial_model: InitialModel,
) -> (String, StrategySpec) {
    (
        name.to_string(),
        StrategySpec {
            name: name.to_string(),
            placements: vec![Placement { hosts, bias, scale }],
            adapt_plan,
            initial_model,
        },
    )
}

pub fn registry() -> BTreeMap<String, StrategySpec> {
    registry_with(RegistryOptions::default())
}

pub fn registry_with(opts: RegistryOptions) -> BTreeMap<String, StrategySpec> {
    use AdaptPlan::*;
    use BiasForm as B;
    use HostLayer::*;
    use InitialModel::*;
    use ScaleForm as S;
    let full_b = Some(B::Full);
    let full_s = Some(S::Full);
    let ad_a1bb = if opts.ad_a1bb_single_code {
        B::Code(256)
    } else {
        B::CodePlusFree { code: 128, free: 128 }
    };
    [
        entry("A1b", vec![A1], Some(B::Code(128)), None, ComponentsOnly, SpeakerAware),
        entry("A1B", vec![A1], full_b, None, ComponentsOnly, SpeakerAware),
        entry("A3a", vec![A3], Some(B::Code(128)), Some(S::Code(128)), ComponentsOnly, SpeakerAware),
        entry("A3A", vec![A3], full_b, full_s, ComponentsOnly, SpeakerAware),
        entry("B1b", vec![B(1)], Some(B::Code(128)), None, ComponentsOnly, SpeakerAware),
        entry("B1B", vec![B(1)], full_b, None, ComponentsOnly, SpeakerAware),
        entry("B8a", vec![B(8)], Some(B::Code(128)), Some(S::Code(128)), ComponentsOnly, SpeakerAware),
        entry("B8A", vec![B(8)], full_b, full_s, ComponentsOnly, SpeakerAware),
        entry("Bab", bs(), Some(B::Code(64)), None, ComponentsOnly, SpeakerAware),
        entry("BaB", bs(), full_b, None, ComponentsOnly, SpeakerAware),
        entry("Baa", bs(), Some(B::Code(64)), Some(S::Code(64)), ComponentsOnly, SpeakerAware),
        entry("BaA", bs(), full_b, full_s, ComponentsOnly, SpeakerAware),
        entry("BaB_all", bs(), full_b, None, StripAndFinetuneAll, SpeakerAware),
        entry("Baa_all", bs(), Some(B::Code(64)), Some(S::Code(64)), StripAndFinetuneAll, SpeakerAware),
        entry("MU-A1b", vec![A1], Some(B::Code(128)), None, ComponentsOnly, MultiSpeakerBaseline),
        entry("MU-A1B", vec![A1], full_b, None, ComponentsOnly, MultiSpeakerBaseline),
        entry("AD-A1b", vec![A1], Some(B::Code(128)), None, ComponentsOnly, DeterministicBaseline),
        entry("AD-A1bB", vec![A1], Some(ad_a1bb), None, ComponentsOnly, DeterministicBaseline),
        entry("AD-A1B", vec![A1], full_b, None, ComponentsOnly, DeterministicBaseline),
    ]
    .into_iter()
    .collect()
}

pub fn lookup(name: &str) -> Option<StrategySpec> {
    registry().remove(name)
}

/// Rescales a code size quoted at [`REFERENCE_WIDTH`] to decoder width `m`.
pub fn scaled_dim(d: usize, m: usize) -> usize {
    (d * m).div_ceil(REFERENCE_WIDTH).max(1)
}

fn scaled_bias(b: BiasForm, m: usize) -> BiasForm {
    match b {
        BiasForm::Full => BiasForm::Full,
        BiasForm::Code(q) => BiasForm::Code(scaled_dim(q, m)),
        BiasForm::CodePlusFree { code, free } => BiasForm::CodePlusFree {
            code: scaled_dim(code, m),
            free: scaled_dim(free, m),
        },
    }
}

fn scaled_scale(s: ScaleForm, m: usize) -> ScaleForm {
    match s {
        ScaleForm::Full => ScaleForm::Full,
        ScaleForm::Code(p) => ScaleForm::Code(scaled_dim(p, m)),
    }
}

fn check_host(host: HostLayer, config: &NetworkConfig) -> Result<()> {
    match host {
        HostLayer::B(i) if i == 0 || usize::from(i) > config.decoder_conv_blocks.len() => Err(Error::Spec(
            format!("host layer {host} does not exist in a decoder with {} conv layers", config.decoder_conv_blocks.len()),
        )),
        _ => Ok(()),
    }
}

/// Per-host component layout of `spec` at the width of `config`.
fn layout(spec: &StrategySpec, config: &NetworkConfig) -> Result<Vec<(HostLayer, Option<BiasForm>, Option<ScaleForm>)>> {
    let m = config.decoder_hidden;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in &spec.placements {
        for &host in &p.hosts {
            check_host(host, config)?;
            if !seen.insert(host) {
                return Err(Error::Spec(format!("{}: host {host} placed twice", spec.name)));
            }
            out.push((host, p.bias.map(|b| scaled_bias(b, m)), p.scale.map(|s| scaled_scale(s, m))));
        }
    }
    Ok(out)
}

/// Trainable scalars owned by one speaker.
pub fn speaker_footprint(spec: &StrategySpec, config: &NetworkConfig) -> Result<usize> {
    let m = config.decoder_hidden;
    let mut total = 0;
    for (host, bias, scale) in layout(spec, config)? {
        let paths = if host.is_gated() { 2 } else { 1 };
        total += match bias {
            None => 0,
            Some(BiasForm::Full) => paths * m,
            Some(BiasForm::Code(q)) => q,
            Some(BiasForm::CodePlusFree { code, free }) => code + free,
        };
        total += match scale {
            None => 0,
            Some(ScaleForm::Full) => paths * m,
            Some(ScaleForm::Code(p)) => p,
        };
    }
    Ok(total)
}

/// Footprint formatted the way the strategy tables print it, e.g. `512x8`.
pub fn footprint_label(spec: &StrategySpec, config: &NetworkConfig) -> Result<String> {
    let hosts = layout(spec, config)?.len().max(1);
    let total = speaker_footprint(spec, config)?;
    Ok(format!("{}x{}", total / hosts, hosts))
}

/// Network with speaker components allocated for every training speaker.
pub fn build_model(
    spec: &StrategySpec,
    config: &NetworkConfig,
    speakers: &[SpeakerId],
    rng: &mut SeededRng,
) -> Result<ModelParameters> {
    if speakers.is_empty() {
        return Err(Error::Config("a model needs at least one training speaker".into()));
    }
    let mut config = config.clone();
    config.deterministic_latent = spec.initial_model.deterministic();
    let mut model = ModelParameters::new(config, rng)?;
    for (host, bias, scale) in layout(spec, &model.config)? {
        let hc = HostComponents::new(rng, model.config.decoder_hidden, host.is_gated(), bias, scale);
        model.spk.add_host(host, hc)?;
    }
    for &spk in speakers {
        model.spk.add_speaker(spk, SpeakerInit::Training)?;
    }
    Ok(model)
}

/// A model prepared for adaptation together with the names it may change.
#[derive(Debug, Clone)]
pub struct AdaptationPlan {
    pub model: ModelParameters,
    pub speaker: SpeakerId,
    pub trainable: BTreeSet<String>,
}

impl AdaptationPlan {
    pub fn selects(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    /// Number of scalars the plan may change.
    pub fn scalars(&self) -> usize {
        let mut n = 0;
        self.model.visit(&mut |name, t| {
            if self.trainable.contains(name) {
                n += t.len();
            }
        });
        n
    }
}

pub fn adaptation_plan(spec: &StrategySpec, model: &ModelParameters, new_speaker: SpeakerId) -> Result<AdaptationPlan> {
    if model.spk.contains(new_speaker) {
        return Err(Error::Identity(format!("{new_speaker} is already a training speaker")));
    }
    match spec.adapt_plan {
        AdaptPlan::ComponentsOnly => {
            let before: BTreeSet<String> = model.names().into_iter().collect();
            let mut m = model.clone();
            m.spk.add_speaker(new_speaker, SpeakerInit::Adaptation)?;
            let trainable = m.names().into_iter().filter(|n| !before.contains(n)).collect();
            Ok(AdaptationPlan {
                model: m,
                speaker: new_speaker,
                trainable,
            })
        }
        AdaptPlan::StripAndFinetuneAll => {
            let m = model.stripped();
            let trainable = m
                .names()
                .into_iter()
                .filter(|n| ParamGroup::of(n) == Some(ParamGroup::DecoderCore))
                .collect();
            Ok(AdaptationPlan {
                model: m,
                speaker: new_speaker,
                trainable,
            })
        }
    }
}
