use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::NetworkConfig;
use crate::error::{Error, Result};
use crate::layers::{
    sa_ff_forward, Activation, FeedforwardLayer, GatedConvLayer, HostLayer, Session,
    SpeakerComponentSet, SpeakerId, UnitKind,
};
use crate::numcore::{Tensor, Var};
use crate::rng::{normal_tensor, SeededRng};

/// Per-frame diagonal Gaussian over the latent embedding.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSequence {
    pub mu: Var,
    pub sigma: Var,
}

/// Encoder shared by the linguistic and acoustic branches: two tanh layers,
/// a block of gated convolutions, one more tanh layer, then mean and
/// log-standard-deviation heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub ff1: FeedforwardLayer,
    pub ff2: FeedforwardLayer,
    pub convs: Vec<GatedConvLayer>,
    pub ff3: FeedforwardLayer,
    /// `d_z x hidden`.
    pub mu: Tensor,
    /// `d_z x hidden`; absent for a deterministic latent.
    pub sigma: Option<Tensor>,
}

impl Encoder {
    pub fn new(
        rng: &mut SeededRng,
        d_in: usize,
        hidden: usize,
        d_z: usize,
        dilations: &[usize],
        kind: UnitKind,
        deterministic: bool,
    ) -> Self {
        let head_std = 1.0 / libm::sqrt(hidden as f64);
        Encoder {
            ff1: FeedforwardLayer::new(rng, d_in, hidden, Activation::Tanh),
            ff2: FeedforwardLayer::new(rng, hidden, hidden, Activation::Tanh),
            convs: dilations
                .iter()
                .map(|&d| GatedConvLayer::new(rng, hidden, d, kind))
                .collect(),
            ff3: FeedforwardLayer::new(rng, hidden, hidden, Activation::Tanh),
            mu: normal_tensor(rng, &[d_z, hidden], head_std),
            sigma: (!deterministic).then(|| normal_tensor(rng, &[d_z, hidden], 0.1 * head_std)),
        }
    }

    pub fn d_in(&self) -> usize {
        self.ff1.m_in()
    }

    pub fn d_z(&self) -> usize {
        self.mu.shape()[0]
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.ff1.visit(&format!("{prefix}.ff1"), f);
        self.ff2.visit(&format!("{prefix}.ff2"), f);
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&format!("{prefix}.conv{}", i + 1), f);
        }
        self.ff3.visit(&format!("{prefix}.ff3"), f);
        f(&format!("{prefix}.mu"), &self.mu);
        if let Some(s) = &self.sigma {
            f(&format!("{prefix}.sigma"), s);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.ff1.visit_mut(&format!("{prefix}.ff1"), f);
        self.ff2.visit_mut(&format!("{prefix}.ff2"), f);
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}.conv{}", i + 1), f);
        }
        self.ff3.visit_mut(&format!("{prefix}.ff3"), f);
        f(&format!("{prefix}.mu"), &mut self.mu);
        if let Some(s) = &mut self.sigma {
            f(&format!("{prefix}.sigma"), s);
        }
    }

    pub fn forward(&self, s: &mut Session, prefix: &str, x: Var) -> Result<GaussianSequence> {
        let shape = s.graph.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.d_in() {
            return Err(Error::Dimension {
                op: "encoder input",
                lhs: shape,
                rhs: alloc::vec![self.d_in()],
            });
        }
        let t_len = shape[0];
        let h = self.ff1.forward(s, &format!("{prefix}.ff1"), x)?;
        let mut h = self.ff2.forward(s, &format!("{prefix}.ff2"), h)?;
        let mut skip_sum: Option<Var> = None;
        for (i, c) in self.convs.iter().enumerate() {
            let (res, skip) = crate::layers::gated_conv_forward(
                c,
                s,
                &format!("{prefix}.conv{}", i + 1),
                h,
                Default::default(),
            )?;
            h = res;
            if let Some(sk) = skip {
                skip_sum = Some(match skip_sum {
                    Some(acc) => s.graph.add(acc, sk)?,
                    None => sk,
                });
            }
        }
        let h_z = self.ff3.forward(s, &format!("{prefix}.ff3"), skip_sum.unwrap_or(h))?;
        let wm = s.param(&format!("{prefix}.mu"), &self.mu);
        let mu = s.graph.matmul_bt(h_z, wm)?;
        let sigma = match &self.sigma {
            Some(ws) => {
                let ws = s.param(&format!("{prefix}.sigma"), ws);
                let log_sigma = s.graph.matmul_bt(h_z, ws)?;
                s.graph.exp(log_sigma)
            }
            None => s.input(Tensor::ones(&[t_len, self.d_z()])),
        };
        Ok(GaussianSequence { mu, sigma })
    }
}

/// Speaker-adaptive acoustic decoder: A1, A2 (tanh), B1..Bn gated
/// convolutions, A3 (linear hidden), A4 (linear output).
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub a1: FeedforwardLayer,
    pub a2: FeedforwardLayer,
    pub convs: Vec<GatedConvLayer>,
    pub a3: FeedforwardLayer,
    pub a4: FeedforwardLayer,
}

impl Decoder {
    pub fn new(rng: &mut SeededRng, config: &NetworkConfig) -> Self {
        let m = config.decoder_hidden;
        Decoder {
            a1: FeedforwardLayer::new(rng, config.d_z, m, Activation::Tanh),
            a2: FeedforwardLayer::new(rng, m, m, Activation::Tanh),
            convs: config
                .decoder_conv_blocks
                .iter()
                .map(|&d| GatedConvLayer::new(rng, m, d, UnitKind::ResidualOnly))
                .collect(),
            a3: FeedforwardLayer::new(rng, m, m, Activation::Linear),
            a4: FeedforwardLayer::new(rng, m, config.d_y, Activation::Linear),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.a1.visit(&format!("{prefix}.A1"), f);
        self.a2.visit(&format!("{prefix}.A2"), f);
        for (i, c) in self.convs.iter().enumerate() {
            c.visit(&format!("{prefix}.B{}", i + 1), f);
        }
        self.a3.visit(&format!("{prefix}.A3"), f);
        self.a4.visit(&format!("{prefix}.A4"), f);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.a1.visit_mut(&format!("{prefix}.A1"), f);
        self.a2.visit_mut(&format!("{prefix}.A2"), f);
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_mut(&format!("{prefix}.B{}", i + 1), f);
        }
        self.a3.visit_mut(&format!("{prefix}.A3"), f);
        self.a4.visit_mut(&format!("{prefix}.A4"), f);
    }
}

/// Which module a named parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamGroup {
    LinguisticEncoder,
    AcousticEncoder,
    DecoderCore,
    Speaker,
}

impl ParamGroup {
    pub fn of(name: &str) -> Option<ParamGroup> {
        let head = name.split('.').next()?;
        Some(match head {
            LENC => ParamGroup::LinguisticEncoder,
            AENC => ParamGroup::AcousticEncoder,
            DEC => ParamGroup::DecoderCore,
            "spk" => ParamGroup::Speaker,
            _ => return None,
        })
    }
}

pub(crate) const LENC: &str = "lenc";
pub(crate) const AENC: &str = "aenc";
pub(crate) const DEC: &str = "dec";

/// All trainable state of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: NetworkConfig,
    pub lenc: Encoder,
    pub aenc: Option<Encoder>,
    pub dec: Decoder,
    pub spk: SpeakerComponentSet,
}

impl ModelParameters {
    /// Fresh network without speaker components. The acoustic encoder is
    /// omitted in deterministic-latent (baseline) mode.
    pub fn new(config: NetworkConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let lenc = Encoder::new(
            rng,
            config.d_x,
            config.encoder_hidden,
            config.d_z,
            &config.encoder_conv_block,
            UnitKind::ResidualSkip,
            config.deterministic_latent,
        );
        let aenc = (!config.deterministic_latent).then(|| {
            Encoder::new(
                rng,
                config.d_y,
                config.encoder_hidden,
                config.d_z,
                &config.encoder_conv_block,
                UnitKind::ResidualOnly,
                false,
            )
        });
        let dec = Decoder::new(rng, &config);
        Ok(ModelParameters {
            config,
            lenc,
            aenc,
            dec,
            spk: SpeakerComponentSet::new(),
        })
    }

    /// Visits every parameter with its unique, stable name.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        self.lenc.visit(LENC, f);
        if let Some(a) = &self.aenc {
            a.visit(AENC, f);
        }
        self.dec.visit(DEC, f);
        self.spk.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.lenc.visit_mut(LENC, f);
        if let Some(a) = &mut self.aenc {
            a.visit_mut(AENC, f);
        }
        self.dec.visit_mut(DEC, f);
        self.spk.visit_mut(f);
    }

    /// Visits only the kept groups, and within the speaker group only the
    /// vectors of kept speakers.
    pub fn visit_mut_where(
        &mut self,
        group: &dyn Fn(ParamGroup) -> bool,
        speaker: &dyn Fn(SpeakerId) -> bool,
        f: &mut dyn FnMut(&str, &mut Tensor),
    ) {
        if group(ParamGroup::LinguisticEncoder) {
            self.lenc.visit_mut(LENC, f);
        }
        if let Some(a) = self.aenc.as_mut().filter(|_| group(ParamGroup::AcousticEncoder)) {
            a.visit_mut(AENC, f);
        }
        if group(ParamGroup::DecoderCore) {
            self.dec.visit_mut(DEC, f);
        }
        if group(ParamGroup::Speaker) {
            self.spk.visit_mut_speakers(speaker, f);
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(String::from(n)));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        let mut found = None;
        self.visit(&mut |n, t| {
            if n == name {
                found = Some(t);
            }
        });
        found
    }

    pub fn count(&self, group: ParamGroup) -> usize {
        let mut n = 0;
        self.visit(&mut |name, t| {
            if ParamGroup::of(name) == Some(group) {
                n += t.len();
            }
        });
        n
    }

    /// FNV-1a digest over the names and raw bits of one parameter group.
    pub fn digest(&self, group: Option<ParamGroup>) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        self.visit(&mut |name, t| {
            if group.is_none() || ParamGroup::of(name) == group {
                eat(name.as_bytes());
                for v in t.data() {
                    eat(&v.to_bits().to_le_bytes());
                }
            }
        });
        h
    }

    /// Replaces the speaker components with an empty set.
    pub fn stripped(&self) -> ModelParameters {
        ModelParameters {
            spk: self.spk.strip(),
            ..self.clone()
        }
    }
}

/// Host-layer speaker modulation for `speaker`, neutral when the component
/// set is empty.
fn modulation(
    s: &mut Session,
    model: &ModelParameters,
    host: HostLayer,
    speaker: SpeakerId,
) -> Result<crate::layers::Modulation> {
    model.spk.bind(s, host, speaker)
}

/// Decoder pass for one speaker; returns the point estimate of the acoustic frames.
pub fn dec_forward(s: &mut Session, model: &ModelParameters, z: Var, speaker: SpeakerId) -> Result<Var> {
    if !model.spk.is_empty() && !model.spk.contains(speaker) {
        return Err(Error::Lookup(format!("{speaker} has no speaker components")));
    }
    let d = &model.dec;
    let zs = s.graph.value(z).shape().to_vec();
    if zs.len() != 2 || zs[1] != d.a1.m_in() {
        return Err(Error::Dimension {
            op: "decoder input",
            lhs: zs,
            rhs: alloc::vec![d.a1.m_in()],
        });
    }
    let m = modulation(s, model, HostLayer::A1, speaker)?;
    let mut h = sa_ff_forward(&d.a1, s, "dec.A1", z, m.scale[0], m.bias[0])?;
    h = d.a2.forward(s, "dec.A2", h)?;
    for (i, c) in d.convs.iter().enumerate() {
        let host = HostLayer::B((i + 1) as u8);
        let m = if i < 8 { modulation(s, model, host, speaker)? } else { Default::default() };
        let (res, _) = crate::layers::gated_conv_forward(c, s, &format!("dec.B{}", i + 1), h, m.gate())?;
        h = res;
    }
    let m = modulation(s, model, HostLayer::A3, speaker)?;
    h = sa_ff_forward(&d.a3, s, "dec.A3", h, m.scale[0], m.bias[0])?;
    d.a4.forward(s, "dec.A4", h)
}
