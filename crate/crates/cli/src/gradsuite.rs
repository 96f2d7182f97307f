//! Finite-difference gradient suite behind `spkadapt gradcheck`.
//!
//! Each check builds a scalar function of some named tensors, then compares
//! reverse-mode gradients with central differences for a range of seeds.

use std::time::Instant;

use spkadapt_core::layers::{
    finite_diff_check_session, gated_conv_forward, sa_ff_forward, Activation, BiasForm, FeedforwardLayer,
    GateModulation, GatedConvLayer, HostComponents, HostLayer, ScaleForm, Session, SpeakerComponentSet, SpeakerId,
    SpeakerInit, UnitKind,
};
use spkadapt_core::network::{
    dec_forward, sts_forward, tts_forward, Encoder, GaussianSequence, ModelParameters, NetworkConfig, SamplingMode,
};
use spkadapt_core::numcore::{Tensor, Var};
use spkadapt_core::objectives::{adapt_loss, kld_gaussian, mse_loss, train_loss, AdaptKind, FrameMask};
use spkadapt_core::rng::{normal_tensor, seeded, uniform, SeededRng};
use spkadapt_core::strategies::{build_model, lookup};
use spkadapt_core::Result;

pub const TOLERANCE: f64 = 1e-5;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Layers,
    Losses,
    Full,
}

impl Scope {
    pub fn parse(s: &str) -> Option<Scope> {
        match s {
            "layers" => Some(Scope::Layers),
            "losses" => Some(Scope::Losses),
            "full" => Some(Scope::Full),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scope::Layers => "layers",
            Scope::Losses => "losses",
            Scope::Full => "full",
        }
    }

    pub const ALL: [Scope; 3] = [Scope::Layers, Scope::Losses, Scope::Full];
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub scope: Scope,
    pub name: &'static str,
    pub seeds: usize,
    /// Largest relative error over all seeds and coordinates.
    pub worst: f64,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst < TOLERANCE
    }
}

type Check = fn(u64) -> Result<f64>;

/// Gradient check of `f` with respect to every tensor in `named`. Each
/// name is bound in the session, so the parameter lookups of layers and
/// models resolve to the perturbed copies.
fn check_named(named: &[(String, Tensor)], f: impl Fn(&mut Session) -> Result<Var>) -> Result<f64> {
    let points: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
    finite_diff_check_session(
        |s, vars| {
            for ((name, _), &v) in named.iter().zip(vars) {
                s.bind(name, v);
            }
            f(s)
        },
        &points,
        EPS,
    )
}

/// Weighted sum against fixed random weights, so every output coordinate
/// contributes with its own sign.
fn project(s: &mut Session, v: Var, w: &Tensor) -> Result<Var> {
    let w = s.input(w.clone());
    let p = s.graph.mul(v, w)?;
    Ok(s.graph.sum(p))
}

fn named(visit: impl FnOnce(&mut dyn FnMut(&str, &Tensor))) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    visit(&mut |n, t| out.push((n.to_string(), t.clone())));
    out
}

fn perturb(t: &mut Tensor, rng: &mut SeededRng, std: f64) {
    let noise = normal_tensor(rng, t.shape(), std);
    for (v, e) in t.data_mut().iter_mut().zip(noise.data()) {
        *v += e;
    }
}

fn positive(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = uniform(rng, 0.5, 1.5);
    }
    t
}

fn op_matmul(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let pts = [normal_tensor(&mut rng, &[4, 3], 1.0), normal_tensor(&mut rng, &[3, 5], 1.0), normal_tensor(&mut rng, &[5, 3], 1.0)];
    let w1 = normal_tensor(&mut rng, &[4, 5], 1.0);
    let w2 = normal_tensor(&mut rng, &[4, 5], 1.0);
    finite_diff_check_session(
        |s, v| {
            let a = s.graph.matmul(v[0], v[1])?;
            let b = s.graph.matmul_bt(v[0], v[2])?;
            let pa = project(s, a, &w1)?;
            let pb = project(s, b, &w2)?;
            s.graph.add(pa, pb)
        },
        &pts,
        EPS,
    )
}

fn op_conv(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let dilation = 1 + (seed % 3) as usize;
    let pts = [normal_tensor(&mut rng, &[9, 3], 1.0), normal_tensor(&mut rng, &[3, 3, 4], 1.0)];
    let w = normal_tensor(&mut rng, &[9, 4], 1.0);
    finite_diff_check_session(
        |s, v| {
            let y = s.graph.dilated_conv1d(v[0], v[1], dilation)?;
            project(s, y, &w)
        },
        &pts,
        EPS,
    )
}

fn op_elementwise(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let pts = [normal_tensor(&mut rng, &[3, 4], 0.7), positive(&mut rng, &[3, 4]), normal_tensor(&mut rng, &[4], 1.0)];
    let w = normal_tensor(&mut rng, &[3, 4], 1.0);
    finite_diff_check_session(
        |s, v| {
            let g = &mut s.graph;
            let t = g.tanh(v[0]);
            let sg = g.sigmoid(v[0]);
            let e = g.exp(v[0]);
            let l = g.ln(v[1]);
            let q = g.square(v[1]);
            let a = g.mul(t, sg)?;
            let b = g.sub(e, l)?;
            let c = g.add(a, b)?;
            let c = g.add(c, v[2])?;
            let c = g.mul(c, q)?;
            let c = g.scale(c, 0.7);
            let c = g.add_scalar(c, 0.3);
            let r = g.reshape(c, &[12])?;
            let m = g.mean(r);
            let wv = g.constant(w.clone());
            let p = g.mul(c, wv)?;
            let p = g.sum(p);
            g.add(p, m)
        },
        &pts,
        EPS,
    )
}

fn feedforward(seed: u64, activation: Activation) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut layer = FeedforwardLayer::new(&mut rng, 4, 3, activation);
    perturb(&mut layer.c, &mut rng, 0.3);
    let mut params = named(|f| layer.visit("ff", &mut |n, t| f(n, t)));
    params.push(("in".into(), normal_tensor(&mut rng, &[7, 4], 1.0)));
    params.push(("scale".into(), positive(&mut rng, &[3])));
    params.push(("bias".into(), normal_tensor(&mut rng, &[3], 0.5)));
    let w = normal_tensor(&mut rng, &[7, 3], 1.0);
    check_named(&params, |s| {
        let h = s.bound("in").unwrap();
        let (a, b) = (s.bound("scale"), s.bound("bias"));
        let y = sa_ff_forward(&layer, s, "ff", h, a, b)?;
        project(s, y, &w)
    })
}

fn ff_tanh(seed: u64) -> Result<f64> {
    feedforward(seed, Activation::Tanh)
}

fn ff_linear(seed: u64) -> Result<f64> {
    feedforward(seed, Activation::Linear)
}

fn gated(seed: u64, kind: UnitKind) -> Result<f64> {
    let mut rng = seeded(seed);
    let dilation = 1 + (seed % 3) as usize;
    let mut layer = GatedConvLayer::new(&mut rng, 3, dilation, kind);
    perturb(&mut layer.cf, &mut rng, 0.3);
    perturb(&mut layer.cg, &mut rng, 0.3);
    let mut params = named(|f| layer.visit("g", &mut |n, t| f(n, t)));
    params.push(("in".into(), normal_tensor(&mut rng, &[8, 3], 1.0)));
    for key in ["sf", "sg"] {
        params.push((key.into(), positive(&mut rng, &[3])));
    }
    for key in ["bf", "bg"] {
        params.push((key.into(), normal_tensor(&mut rng, &[3], 0.5)));
    }
    let wr = normal_tensor(&mut rng, &[8, 3], 1.0);
    let ws = normal_tensor(&mut rng, &[8, 3], 1.0);
    check_named(&params, |s| {
        let h = s.bound("in").unwrap();
        let m = GateModulation {
            scale_f: s.bound("sf"),
            scale_g: s.bound("sg"),
            bias_f: s.bound("bf"),
            bias_g: s.bound("bg"),
        };
        let (res, skip) = gated_conv_forward(&layer, s, "g", h, m)?;
        let mut out = project(s, res, &wr)?;
        if let Some(k) = skip {
            let pk = project(s, k, &ws)?;
            out = s.graph.add(out, pk)?;
        }
        Ok(out)
    })
}

fn gated_residual_only(seed: u64) -> Result<f64> {
    gated(seed, UnitKind::ResidualOnly)
}

fn gated_residual_skip(seed: u64) -> Result<f64> {
    gated(seed, UnitKind::ResidualSkip)
}

/// Speaker components at a feedforward host and a gated host, covering the
/// full, code and code-plus-free forms.
fn components(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let width = 4;
    let spk = SpeakerId(3);
    let mut set = SpeakerComponentSet::new();
    let (ff_bias, gate_bias) = if seed.is_multiple_of(2) {
        (BiasForm::Code(2), BiasForm::Full)
    } else {
        (BiasForm::CodePlusFree { code: 2, free: 2 }, BiasForm::Code(3))
    };
    let (ff_scale, gate_scale) = if seed.is_multiple_of(2) {
        (ScaleForm::Code(2), ScaleForm::Full)
    } else {
        (ScaleForm::Full, ScaleForm::Code(2))
    };
    set.add_host(HostLayer::A1, HostComponents::new(&mut rng, width, false, Some(ff_bias), Some(ff_scale)))?;
    set.add_host(HostLayer::B(1), HostComponents::new(&mut rng, width, true, Some(gate_bias), Some(gate_scale)))?;
    set.add_speaker(spk, SpeakerInit::Training)?;
    set.visit_mut(&mut |_, t| perturb(t, &mut rng, 0.3));
    let ff = FeedforwardLayer::new(&mut rng, 3, width, Activation::Tanh);
    let conv = GatedConvLayer::new(&mut rng, width, 2, UnitKind::ResidualOnly);
    let mut params = named(|f| set.visit(&mut |n, t| f(n, t)));
    params.push(("in".into(), normal_tensor(&mut rng, &[6, 3], 1.0)));
    let w = normal_tensor(&mut rng, &[6, width], 1.0);
    check_named(&params, |s| {
        let h = s.bound("in").unwrap();
        let m1 = set.bind(s, HostLayer::A1, spk)?;
        let h = sa_ff_forward(&ff, s, "ff", h, m1.scale[0], m1.bias[0])?;
        let m2 = set.bind(s, HostLayer::B(1), spk)?;
        let (r, _) = gated_conv_forward(&conv, s, "g", h, m2.gate())?;
        project(s, r, &w)
    })
}

fn encoder(seed: u64, deterministic: bool) -> Result<f64> {
    let mut rng = seeded(seed);
    let enc = Encoder::new(&mut rng, 4, 3, 2, &[1, 2], UnitKind::ResidualSkip, deterministic);
    let mut params = named(|f| enc.visit("e", &mut |n, t| f(n, t)));
    params.push(("in".into(), normal_tensor(&mut rng, &[8, 4], 1.0)));
    let wm = normal_tensor(&mut rng, &[8, 2], 1.0);
    let ws = normal_tensor(&mut rng, &[8, 2], 1.0);
    check_named(&params, |s| {
        let x = s.bound("in").unwrap();
        let g = enc.forward(s, "e", x)?;
        let a = project(s, g.mu, &wm)?;
        if deterministic {
            return Ok(a);
        }
        let b = project(s, g.sigma, &ws)?;
        s.graph.add(a, b)
    })
}

fn encoder_gaussian(seed: u64) -> Result<f64> {
    encoder(seed, false)
}

fn encoder_deterministic(seed: u64) -> Result<f64> {
    encoder(seed, true)
}

/// Small network with eight decoder hosts.
pub fn tiny_network() -> NetworkConfig {
    NetworkConfig {
        d_x: 4,
        d_y: 3,
        d_z: 2,
        encoder_hidden: 3,
        decoder_hidden: 4,
        encoder_conv_block: vec![1, 2],
        decoder_conv_blocks: vec![1, 2, 1, 2, 1, 2, 1, 2],
        deterministic_latent: false,
    }
}

/// Strategy cycled by seed, so the model checks see every host and form.
/// Baselines without an acoustic encoder only join the text-driven checks.
fn strategy_for(seed: u64, text_only: bool) -> &'static str {
    const NAMES: [&str; 6] = ["BaB", "A3a", "Baa", "B8A", "A1b", "AD-A1bB"];
    let n = if text_only { NAMES.len() } else { NAMES.len() - 1 };
    NAMES[seed as usize % n]
}

fn tiny_model(seed: u64, strategy: &str) -> Result<(ModelParameters, SeededRng)> {
    let mut rng = seeded(seed);
    let spec = lookup(strategy).expect("registered strategy");
    let mut m = build_model(&spec, &tiny_network(), &[SpeakerId(0), SpeakerId(1)], &mut rng)?;
    m.visit_mut(&mut |_, t| perturb(t, &mut rng, 0.1));
    Ok((m, rng))
}

fn decoder(seed: u64) -> Result<f64> {
    let (m, mut rng) = tiny_model(seed, strategy_for(seed, true))?;
    let mut params = named(|f| {
        m.visit(&mut |n, t| {
            if n.starts_with("dec.") || n.starts_with("spk.") {
                f(n, t)
            }
        })
    });
    params.push(("z".into(), normal_tensor(&mut rng, &[8, 2], 1.0)));
    let w = normal_tensor(&mut rng, &[8, 3], 1.0);
    check_named(&params, |s| {
        let z = s.bound("z").unwrap();
        let y = dec_forward(s, &m, z, SpeakerId(1))?;
        project(s, y, &w)
    })
}

fn loss_mse(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let target = normal_tensor(&mut rng, &[7, 3], 1.0);
    let mut mask = FrameMask::all(7);
    mask.0[(seed % 7) as usize] = false;
    mask.0[((seed + 3) % 7) as usize] = false;
    let pts = [normal_tensor(&mut rng, &[7, 3], 1.0)];
    finite_diff_check_session(
        |s, v| {
            let a = mse_loss(&mut s.graph, v[0], &target, None)?;
            let b = mse_loss(&mut s.graph, v[0], &target, Some(&mask))?;
            s.graph.add(a, b)
        },
        &pts,
        EPS,
    )
}

fn loss_kld(seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let pts = [
        normal_tensor(&mut rng, &[5, 2], 1.0),
        positive(&mut rng, &[5, 2]),
        normal_tensor(&mut rng, &[5, 2], 1.0),
        positive(&mut rng, &[5, 2]),
    ];
    finite_diff_check_session(
        |s, v| {
            kld_gaussian(
                &mut s.graph,
                GaussianSequence { mu: v[0], sigma: v[1] },
                GaussianSequence { mu: v[2], sigma: v[3] },
            )
        },
        &pts,
        EPS,
    )
}

fn utterance_pair(rng: &mut SeededRng) -> (Tensor, Tensor) {
    (normal_tensor(rng, &[8, 4], 1.0), normal_tensor(rng, &[8, 3], 1.0))
}

fn all_params(m: &ModelParameters) -> Vec<(String, Tensor)> {
    named(|f| m.visit(&mut |n, t| f(n, t)))
}

/// Noise is redrawn from the same seed on every evaluation, so the sampled
/// latent is a fixed function of the parameters.
fn stack(seed: u64, tts: bool) -> Result<f64> {
    let (m, mut rng) = tiny_model(seed, strategy_for(seed, tts))?;
    let (x, y) = utterance_pair(&mut rng);
    check_named(&all_params(&m), |s| {
        let mut noise = seeded(seed ^ 0xA5A5);
        let (pred, _) = if tts {
            tts_forward(s, &m, &x, SpeakerId(1), SamplingMode::Reparameterized, &mut noise)?
        } else {
            sts_forward(s, &m, &y, SpeakerId(1), SamplingMode::Reparameterized, &mut noise)?
        };
        mse_loss(&mut s.graph, pred, &y, None)
    })
}

fn stack_tts(seed: u64) -> Result<f64> {
    stack(seed, true)
}

fn stack_sts(seed: u64) -> Result<f64> {
    stack(seed, false)
}

fn objective_train(seed: u64) -> Result<f64> {
    let (m, mut rng) = tiny_model(seed, strategy_for(seed, true))?;
    let (x, y) = utterance_pair(&mut rng);
    check_named(&all_params(&m), |s| {
        let mut noise = seeded(seed ^ 0x5A5A);
        Ok(train_loss(s, &m, &x, &y, SpeakerId(0), 0.25, SamplingMode::Reparameterized, &mut noise)?.total)
    })
}

fn objective_adapt(seed: u64) -> Result<f64> {
    let (m, mut rng) = tiny_model(seed, strategy_for(seed, false))?;
    let (x, y) = utterance_pair(&mut rng);
    let kind = [AdaptKind::Supervised, AdaptKind::Unsupervised, AdaptKind::SupervisedPlus][seed as usize % 3];
    let x = kind.needs_text().then_some(&x);
    check_named(&all_params(&m), |s| {
        let mut noise = seeded(seed ^ 0x3C3C);
        adapt_loss(s, &m, kind, x, &y, SpeakerId(1), SamplingMode::Reparameterized, &mut noise)
    })
}

pub fn checks(scope: Scope) -> Vec<(&'static str, Check)> {
    match scope {
        Scope::Layers => vec![
            ("op.matmul", op_matmul as Check),
            ("op.dilated_conv1d", op_conv),
            ("op.elementwise", op_elementwise),
            ("feedforward.tanh", ff_tanh),
            ("feedforward.linear", ff_linear),
            ("gated.residual_only", gated_residual_only),
            ("gated.residual_skip", gated_residual_skip),
            ("speaker_components", components),
            ("encoder.gaussian", encoder_gaussian),
            ("encoder.deterministic", encoder_deterministic),
            ("decoder", decoder),
        ],
        Scope::Losses => vec![("loss.mse", loss_mse as Check), ("loss.kld", loss_kld)],
        Scope::Full => vec![
            ("stack.tts", stack_tts as Check),
            ("stack.sts", stack_sts),
            ("objective.train", objective_train),
            ("objective.adapt", objective_adapt),
        ],
    }
}

pub fn run_scope(scope: Scope, seeds: usize) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (name, check) in checks(scope) {
        let t = Instant::now();
        let mut worst = 0.0f64;
        for seed in 0..seeds as u64 {
            worst = worst.max(check(seed)?);
        }
        out.push(CheckResult {
            scope,
            name,
            seeds,
            worst,
            seconds: t.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}
