//! Synthetic multi-speaker corpus with a known speaker transform.
//!
//! Linguistic frames are runs of noisy one-hot "phones"; acoustic frames are
//! `M_k (alpha_k * g(x)) + beta_k + noise`, with `g` a fixed random tanh
//! network shared by all speakers.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::SpeakerId;
use crate::network::NetworkConfig;
use crate::numcore::Tensor;
use crate::objectives::{masked_mse, FrameMask};
use crate::rng::{derive, normal, normal_tensor, uniform, SeededRng};

/// First id handed to target (unseen) speakers.
pub const TARGET_ID_BASE: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: SpeakerId,
    /// Absent for text-free data.
    pub linguistic: Option<Tensor>,
    pub acoustic: Tensor,
    pub mask: FrameMask,
    pub split: Split,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.acoustic.shape()[0]
    }

    /// Checks the shape invariants shared by every utterance.
    pub fn validate(&self) -> Result<()> {
        let t = self.frames();
        if let Some(x) = &self.linguistic {
            if x.shape()[0] != t {
                return Err(Error::Data(format!("{}: linguistic and acoustic frame counts differ", self.id)));
            }
        }
        if self.mask.len() != t {
            return Err(Error::Data(format!("{}: mask length {} != {t} frames", self.id, self.mask.len())));
        }
        if self.mask.speech_frames() == 0 {
            return Err(Error::Data(format!("{}: no speech frames", self.id)));
        }
        Ok(())
    }

    /// Copy with the linguistic frames removed.
    pub fn without_text(&self) -> Utterance {
        Utterance {
            linguistic: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub d_x: usize,
    pub d_y: usize,
    pub n_base_speakers: usize,
    /// Utterances per base speaker, split into train and valid.
    pub base_utterances: usize,
    pub base_valid: usize,
    pub n_target_speakers: usize,
    /// Adaptation pool per target speaker; subsets are its prefixes.
    pub target_adapt: usize,
    pub target_valid: usize,
    pub target_test: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub segment_min: usize,
    pub segment_max: usize,
    pub silence_prob: f64,
    /// Standard deviation of the per-segment noise added to one-hot phones.
    pub phone_noise: f64,
    /// Observation noise `eta`.
    pub noise: f64,
    /// Hidden width of the shared map `g`.
    pub g_hidden: usize,
    /// Log-normal spread of the speaker scales.
    pub scale_spread: f64,
    pub bias_spread: f64,
    /// Frobenius norm bound of `M_k - I`.
    pub mixing_radius: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            d_x: 16,
            d_y: 12,
            n_base_speakers: 20,
            base_utterances: 40,
            base_valid: 4,
            n_target_speakers: 4,
            target_adapt: 100,
            target_valid: 3,
            target_test: 10,
            t_min: 20,
            t_max: 60,
            segment_min: 3,
            segment_max: 8,
            silence_prob: 0.15,
            phone_noise: 0.1,
            noise: 0.1,
            g_hidden: 24,
            scale_spread: 0.3,
            bias_spread: 0.5,
            mixing_radius: 0.2,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(String::from(m)));
        if self.d_x < 2 {
            return bad("d_x must be at least 2 (index 0 is silence)");
        }
        if self.d_y == 0 || self.g_hidden == 0 {
            return bad("d_y and g_hidden must be positive");
        }
        if self.n_base_speakers == 0 {
            return bad("at least one base speaker is required");
        }
        if self.base_valid == 0 || self.base_valid >= self.base_utterances {
            return bad("base_valid must be between 1 and base_utterances - 1");
        }
        if self.n_target_speakers > 0 && (self.target_adapt == 0 || self.target_test == 0) {
            return bad("target speakers need adaptation and test utterances");
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad("frame range must satisfy 1 <= t_min <= t_max");
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return bad("segment range must satisfy 1 <= segment_min <= segment_max");
        }
        if !(0.0..1.0).contains(&self.silence_prob) {
            return bad("silence_prob must lie in [0, 1)");
        }
        let nonneg = [self.phone_noise, self.noise, self.scale_spread, self.bias_spread, self.mixing_radius];
        if nonneg.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return bad("noise levels and spreads must be finite and non-negative");
        }
        if self.n_base_speakers as u64 > u64::from(TARGET_ID_BASE) {
            return bad("too many base speakers for the target id range");
        }
        Ok(())
    }

    /// Rejects corpora whose feature sizes disagree with a network.
    pub fn check_network(&self, net: &NetworkConfig) -> Result<()> {
        if self.d_x != net.d_x || self.d_y != net.d_y {
            return Err(Error::Config(format!(
                "corpus dims ({}, {}) do not match network dims ({}, {})",
                self.d_x, self.d_y, net.d_x, net.d_y
            )));
        }
        Ok(())
    }

    pub fn base_speakers(&self) -> Vec<SpeakerId> {
        (0..self.n_base_speakers as u32).map(SpeakerId).collect()
    }

    pub fn target_speakers(&self) -> Vec<SpeakerId> {
        (0..self.n_target_speakers as u32).map(|i| SpeakerId(TARGET_ID_BASE + i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerTransform {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Row-major `D_y x D_y`.
    pub mixing: Tensor,
}

/// The generating process, kept so the noise floor can be computed.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub w1: Tensor,
    pub b1: Vec<f64>,
    pub w2: Tensor,
    pub noise: f64,
    pub speakers: Vec<(SpeakerId, SpeakerTransform)>,
}

impl GroundTruth {
    pub fn transform(&self, speaker: SpeakerId) -> Result<&SpeakerTransform> {
        self.speakers
            .iter()
            .find(|(s, _)| *s == speaker)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Lookup(format!("{speaker} is not in the ground truth")))
    }

    /// The shared map applied frame by frame: `W2 tanh(W1 x + b1)`.
    pub fn g(&self, x: &Tensor) -> Result<Tensor> {
        let (t_len, d_x) = x.dims2()?;
        let (h, w1_in) = self.w1.dims2()?;
        if d_x != w1_in {
            return Err(crate::error::dim_err("ground truth g", &[w1_in], &[d_x]));
        }
        let (d_y, _) = self.w2.dims2()?;
        let mut out = Tensor::zeros(&[t_len, d_y]);
        let mut hidden = alloc::vec![0.0; h];
        for t in 0..t_len {
            let xt = x.row(t);
            for (j, hj) in hidden.iter_mut().enumerate() {
                let dot: f64 = self.w1.row(j).iter().zip(xt).map(|(a, b)| a * b).sum();
                *hj = libm::tanh(dot + self.b1[j]);
            }
            let row = &mut out.data_mut()[t * d_y..(t + 1) * d_y];
            for (i, v) in row.iter_mut().enumerate() {
                *v = self.w2.row(i).iter().zip(&hidden).map(|(a, b)| a * b).sum();
            }
        }
        Ok(out)
    }

    /// Noise-free acoustic frames of `speaker` for linguistic frames `x`.
    pub fn render(&self, speaker: SpeakerId, x: &Tensor) -> Result<Tensor> {
        let tr = self.transform(speaker)?;
        let gx = self.g(x)?;
        let (t_len, d_y) = gx.dims2()?;
        let mut out = Tensor::zeros(&[t_len, d_y]);
        let mut scaled = alloc::vec![0.0; d_y];
        for t in 0..t_len {
            for (i, s) in scaled.iter_mut().enumerate() {
                *s = tr.alpha[i] * gx.at2(t, i);
            }
            let row = &mut out.data_mut()[t * d_y..(t + 1) * d_y];
            for (i, v) in row.iter_mut().enumerate() {
                *v = tr.mixing.row(i).iter().zip(&scaled).map(|(a, b)| a * b).sum::<f64>() + tr.beta[i];
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub truth: GroundTruth,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn select(&self, speaker: SpeakerId, split: Split) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.speaker == speaker && u.split == split)
            .collect()
    }

    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }

    pub fn speakers(&self) -> Vec<SpeakerId> {
        let mut s: Vec<SpeakerId> = self.utterances.iter().map(|u| u.speaker).collect();
        s.sort();
        s.dedup();
        s
    }

    /// Training and validation utterances of the base speakers.
    pub fn base(&self, split: Split) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.split == split && u.speaker.0 < TARGET_ID_BASE)
            .collect()
    }

    /// The first `n` adaptation utterances of a target speaker.
    pub fn adaptation_subset(&self, speaker: SpeakerId, n: usize) -> Result<Vec<&Utterance>> {
        let pool = self.select(speaker, Split::Train);
        if n == 0 || n > pool.len() {
            return Err(Error::Data(format!(
                "{speaker} has {} adaptation utterances, {n} requested",
                pool.len()
            )));
        }
        Ok(pool.into_iter().take(n).collect())
    }
}

const STREAM_TRUTH: u64 = 1;
const STREAM_SPEAKER: u64 = 2 << 32;
const STREAM_UTT: u64 = 3 << 40;

fn gen_truth(cfg: &CorpusConfig) -> GroundTruth {
    let mut rng = derive(cfg.seed, STREAM_TRUTH);
    let h = cfg.g_hidden;
    let w1 = normal_tensor(&mut rng, &[h, cfg.d_x], 1.5);
    let b1 = (0..h).map(|_| 0.5 * normal(&mut rng)).collect();
    let w2 = normal_tensor(&mut rng, &[cfg.d_y, h], 1.0 / libm::sqrt(h as f64) * 1.5);
    let speakers = cfg
        .base_speakers()
        .into_iter()
        .chain(cfg.target_speakers())
        .map(|s| (s, gen_speaker(cfg, s)))
        .collect();
    GroundTruth {
        w1,
        b1,
        w2,
        noise: cfg.noise,
        speakers,
    }
}

fn gen_speaker(cfg: &CorpusConfig, speaker: SpeakerId) -> SpeakerTransform {
    let mut rng = derive(cfg.seed, STREAM_SPEAKER + u64::from(speaker.0));
    let d = cfg.d_y;
    let alpha = (0..d).map(|_| libm::exp(cfg.scale_spread * normal(&mut rng))).collect();
    let beta = (0..d).map(|_| cfg.bias_spread * normal(&mut rng)).collect();
    let mut e = normal_tensor(&mut rng, &[d, d], 1.0);
    let norm = libm::sqrt(e.data().iter().map(|v| v * v).sum::<f64>());
    let target = cfg.mixing_radius * uniform(&mut rng, 0.5, 1.0);
    let k = if norm > 0.0 { target / norm } else { 0.0 };
    for (i, v) in e.data_mut().iter_mut().enumerate() {
        *v *= k;
        if i / d == i % d {
            *v += 1.0;
        }
    }
    SpeakerTransform { alpha, beta, mixing: e }
}

fn gen_linguistic(cfg: &CorpusConfig, rng: &mut SeededRng) -> (Tensor, FrameMask) {
    let t_len = rng.random_range(cfg.t_min..=cfg.t_max);
    let mut x = Tensor::zeros(&[t_len, cfg.d_x]);
    let mut mask = Vec::with_capacity(t_len);
    let mut t = 0;
    while t < t_len {
        let seg = rng.random_range(cfg.segment_min..=cfg.segment_max).min(t_len - t);
        let phone = if rng.random::<f64>() < cfg.silence_prob {
            0
        } else {
            rng.random_range(1..cfg.d_x)
        };
        let mut v: Vec<f64> = (0..cfg.d_x).map(|_| cfg.phone_noise * normal(rng)).collect();
        v[phone] += 1.0;
        for r in t..t + seg {
            x.data_mut()[r * cfg.d_x..(r + 1) * cfg.d_x].copy_from_slice(&v);
            mask.push(phone != 0);
        }
        t += seg;
    }
    if !mask.iter().any(|&m| m) {
        // all-silence draw: voice the opening frames instead
        let phone = 1 + t_len % (cfg.d_x - 1);
        for r in 0..cfg.segment_min.min(t_len) {
            let row = &mut x.data_mut()[r * cfg.d_x..(r + 1) * cfg.d_x];
            row[0] -= 1.0;
            row[phone] += 1.0;
            mask[r] = true;
        }
    }
    (x, FrameMask(mask))
}

fn gen_utterance(
    cfg: &CorpusConfig,
    truth: &GroundTruth,
    speaker: SpeakerId,
    split: Split,
    index: usize,
) -> Result<Utterance> {
    let id = format!("{speaker}_{split}_{index:03}");
    let label = STREAM_UTT + (u64::from(speaker.0) << 20) + ((split as u64) << 16) + index as u64;
    let mut rng = derive(cfg.seed, label);
    let (x, mask) = gen_linguistic(cfg, &mut rng);
    let mut y = truth.render(speaker, &x)?;
    if cfg.noise > 0.0 {
        for v in y.data_mut() {
            *v += cfg.noise * normal(&mut rng);
        }
    }
    Ok(Utterance {
        id,
        speaker,
        linguistic: Some(x),
        acoustic: y,
        mask,
        split,
    })
}

/// Generates the full corpus in a fixed order: base speakers then targets,
/// train then valid then test within each speaker.
pub fn gen_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let truth = gen_truth(cfg);
    let mut utterances = Vec::new();
    let base_train = cfg.base_utterances - cfg.base_valid;
    for s in cfg.base_speakers() {
        for (split, n) in [(Split::Train, base_train), (Split::Valid, cfg.base_valid)] {
            for i in 0..n {
                utterances.push(gen_utterance(cfg, &truth, s, split, i)?);
            }
        }
    }
    for s in cfg.target_speakers() {
        for (split, n) in [
            (Split::Train, cfg.target_adapt),
            (Split::Valid, cfg.target_valid),
            (Split::Test, cfg.target_test),
        ] {
            for i in 0..n {
                utterances.push(gen_utterance(cfg, &truth, s, split, i)?);
            }
        }
    }
    Ok(Corpus {
        config: cfg.clone(),
        truth,
        utterances,
    })
}

/// Mean per-utterance masked MSE of the noise-free renderer against the
/// stored frames: the floor no model can beat in expectation.
pub fn oracle_mse(truth: &GroundTruth, utterances: &[&Utterance]) -> Result<f64> {
    if utterances.is_empty() {
        return Err(Error::Data("no utterances to evaluate".into()));
    }
    let mut acc = 0.0;
    for u in utterances {
        let x = u
            .linguistic
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{} has no linguistic frames", u.id)))?;
        let clean = truth.render(u.speaker, x)?;
        acc += masked_mse(&clean, &u.acoustic, &u.mask)?;
    }
    Ok(acc / utterances.len() as f64)
}
