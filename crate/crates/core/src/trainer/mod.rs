//! Optimisation loops: joint training, adaptation and evaluation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::layers::{Session, SpeakerId};
use crate::network::{
    aenc_forward, dec_forward, lenc_forward, sample_latent, sts_forward, tts_forward, GaussianSequence,
    ModelParameters, ParamGroup, SamplingMode,
};
use crate::numcore::{Tensor, Var};
use crate::objectives::{masked_mse, mse_loss, train_loss, AdaptKind};
use crate::rng::{derive, seeded, SeededRng};
use crate::strategies::AdaptationPlan;
use crate::synthcorpus::Utterance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: 5.0,
        }
    }
}

/// Adam moments for the parameters that have received a gradient so far.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update to the parameters named in `grads`.
    pub fn apply(&mut self, model: &mut ModelParameters, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        let norm = libm::sqrt(grads.values().flatten().map(|g| g * g).sum::<f64>());
        if !norm.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let c = self.config;
        let k = if c.clip > 0.0 && norm > c.clip { c.clip / norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, f64::from(t));
        let bc2 = 1.0 - libm::pow(c.beta2, f64::from(t));
        let step = c.lr / bc1;
        let inv_bc2 = 1.0 / bc2;
        let moments = &mut self.moments;
        let mut err = None;
        // parameters without gradients stay put, so skip naming them
        let groups: BTreeSet<ParamGroup> = grads.keys().filter_map(|n| ParamGroup::of(n)).collect();
        let touched: BTreeSet<SpeakerId> = grads
            .keys()
            .filter_map(|n| match n.split('.').collect::<Vec<_>>()[..] {
                ["spk", _, spk, _] => spk.parse().ok(),
                _ => None,
            })
            .collect();
        model.visit_mut_where(&|g| groups.contains(&g), &|s| touched.contains(&s), &mut |name, p| {
            let Some(g) = grads.get(name) else { return };
            if g.len() != p.len() {
                err = Some(Error::Dimension {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: alloc::vec![g.len()],
                });
                return;
            }
            if !moments.contains_key(name) {
                moments.insert(String::from(name), (alloc::vec![0.0; g.len()], alloc::vec![0.0; g.len()]));
            }
            let (m, v) = moments.get_mut(name).expect("inserted above");
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi * k;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                *w -= step * *mi / (libm::sqrt(*vi * inv_bc2) + c.eps);
            }
        });
        err.map_or(Ok(()), Err)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub max_epochs: usize,
    pub patience: usize,
    pub beta: f64,
    pub mode: SamplingMode,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            max_epochs: 128,
            patience: 5,
            beta: 0.25,
            mode: SamplingMode::Reparameterized,
            seed: 0,
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainRun {
    fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean optimisation loss over the epoch's steps.
    pub train_loss: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

/// Observer called after every epoch, e.g. to stream metrics.
pub type EpochHook<'a> = &'a mut dyn FnMut(&EpochRecord);

/// Shared epoch loop: shuffled single-utterance steps, early stopping on a
/// validation metric, best snapshot returned.
fn optimise<F, V>(
    model: ModelParameters,
    ids: &[&str],
    run: &TrainRun,
    trainable: &dyn Fn(&str) -> bool,
    mut step_loss: F,
    mut validate: V,
    hook: Option<EpochHook<'_>>,
) -> Result<(ModelParameters, TrainReport)>
where
    F: FnMut(&mut Session, &ModelParameters, usize, &mut SeededRng) -> Result<Var>,
    V: FnMut(&ModelParameters) -> Result<f64>,
{
    run.validate()?;
    let n_items = ids.len();
    let mut hook = hook;
    let mut model = model;
    let mut opt = OptimizerState::new(run.optimizer);
    let mut order_rng = derive(run.seed, 0x5EED_0001);
    let mut noise_rng = derive(run.seed, 0x5EED_0002);
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut best: Option<(f64, ModelParameters)> = None;
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut since_best = 0;
    for epoch in 0..run.max_epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for &i in &order {
            let mut s = Session::with_selection(trainable);
            let loss = step_loss(&mut s, &model, i, &mut noise_rng).map_err(|e| match e {
                Error::Numeric(detail) => Error::Divergence {
                    epoch,
                    utterance: String::from(ids[i]),
                    detail,
                },
                e => e,
            })?;
            let value = s.graph.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    utterance: String::from(ids[i]),
                    detail: format!("loss is {value}"),
                });
            }
            total += value;
            s.graph.backward(loss)?;
            let grads = s.take_grads();
            opt.apply(&mut model, &grads).map_err(|e| Error::Divergence {
                epoch,
                utterance: String::from(ids[i]),
                detail: format!("{e}"),
            })?;
        }
        let valid = validate(&model)?;
        if !valid.is_finite() {
            return Err(Error::Divergence {
                epoch,
                utterance: String::from("<validation>"),
                detail: format!("validation metric is {valid}"),
            });
        }
        let rec = EpochRecord {
            epoch,
            train_loss: total / n_items as f64,
            valid_mse: valid,
        };
        report.epochs.push(rec);
        if let Some(h) = hook.as_mut() {
            h(&rec);
        }
        if best.as_ref().is_none_or(|(b, _)| valid < *b) {
            best = Some((valid, model.clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= run.patience {
            break;
        }
    }
    let (_, snapshot) = best.expect("at least one epoch runs");
    Ok((snapshot, report))
}

fn require_nonempty(utts: &[&Utterance], what: &str) -> Result<()> {
    if utts.is_empty() {
        return Err(Error::Data(format!("{what} split is empty")));
    }
    Ok(())
}

fn text(u: &Utterance) -> Result<&Tensor> {
    u.linguistic
        .as_ref()
        .ok_or_else(|| Error::Data(format!("{} has no linguistic frames", u.id)))
}

/// Jointly trains every module on `train`, early-stopping on the TTS masked
/// MSE of `valid`.
pub fn train(
    model: ModelParameters,
    train: &[&Utterance],
    valid: &[&Utterance],
    run: &TrainRun,
    hook: Option<EpochHook<'_>>,
) -> Result<(ModelParameters, TrainReport)> {
    require_nonempty(train, "training")?;
    require_nonempty(valid, "validation")?;
    for u in train.iter().chain(valid) {
        u.validate()?;
        text(u)?;
        if !model.spk.is_empty() && !model.spk.contains(u.speaker) {
            return Err(Error::Lookup(format!("{} has no speaker components", u.speaker)));
        }
    }
    let beta = run.beta;
    let mode = run.mode;
    let ids: Vec<&str> = train.iter().map(|u| u.id.as_str()).collect();
    optimise(
        model,
        &ids,
        run,
        &|_| true,
        |s, m, i, rng| {
            let u = train[i];
            Ok(train_loss(s, m, text(u)?, &u.acoustic, u.speaker, beta, mode, rng)?.total)
        },
        |m| Ok(evaluate(m, valid, &|s| s, Stack::Tts)?.aggregate),
        hook,
    )
}

/// Which stack produces predictions during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stack {
    Tts,
    Sts,
}

/// Masked MSE of one utterance in mean mode.
pub fn evaluate_utterance(model: &ModelParameters, u: &Utterance, speaker: SpeakerId, stack: Stack) -> Result<f64> {
    let mut s = Session::inference();
    // mean mode never draws from the generator
    let mut rng = seeded(0);
    let pred = match stack {
        Stack::Tts => tts_forward(&mut s, model, text(u)?, speaker, SamplingMode::Mean, &mut rng)?.0,
        Stack::Sts => sts_forward(&mut s, model, &u.acoustic, speaker, SamplingMode::Mean, &mut rng)?.0,
    };
    masked_mse(s.graph.value(pred), &u.acoustic, &u.mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(utterance id, speaker, masked MSE)` in input order.
    pub utterances: Vec<(String, SpeakerId, f64)>,
    pub per_speaker: BTreeMap<SpeakerId, f64>,
    /// Mean of the per-utterance values.
    pub aggregate: f64,
}

impl EvalReport {
    /// Ordered reduction shared by the serial and parallel paths.
    pub fn from_values(utts: &[&Utterance], values: Vec<f64>) -> Result<EvalReport> {
        if utts.is_empty() || utts.len() != values.len() {
            return Err(Error::Data("nothing to evaluate".into()));
        }
        let mut sums: BTreeMap<SpeakerId, (f64, usize)> = BTreeMap::new();
        let mut total = 0.0;
        let mut rows = Vec::with_capacity(utts.len());
        for (u, &v) in utts.iter().zip(&values) {
            let e = sums.entry(u.speaker).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
            total += v;
            rows.push((u.id.clone(), u.speaker, v));
        }
        Ok(EvalReport {
            utterances: rows,
            per_speaker: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            aggregate: total / utts.len() as f64,
        })
    }
}

/// Serial evaluation. `speaker_map` maps a corpus speaker to the speaker
/// whose components the model should use.
pub fn evaluate(
    model: &ModelParameters,
    utts: &[&Utterance],
    speaker_map: &dyn Fn(SpeakerId) -> SpeakerId,
    stack: Stack,
) -> Result<EvalReport> {
    let values = utts
        .iter()
        .map(|u| evaluate_utterance(model, u, speaker_map(u.speaker), stack))
        .collect::<Result<Vec<f64>>>()?;
    EvalReport::from_values(utts, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptOptions {
    /// Held-out utterances carved from the adaptation pool when no separate
    /// validation set is supplied.
    pub n_valid: usize,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions { n_valid: 3 }
    }
}

/// Splits an adaptation pool into (train, valid). Pools of at most
/// `n_valid` utterances hold out only their last utterance; a single
/// utterance validates on itself.
pub fn split_adaptation_pool<'u>(
    pool: &[&'u Utterance],
    opts: AdaptOptions,
) -> Result<(Vec<&'u Utterance>, Vec<&'u Utterance>)> {
    require_nonempty(pool, "adaptation")?;
    let n = pool.len();
    let hold = if n == 1 {
        return Ok((pool.to_vec(), pool.to_vec()));
    } else if n <= opts.n_valid {
        1
    } else {
        opts.n_valid.max(1)
    };
    Ok((pool[..n - hold].to_vec(), pool[n - hold..].to_vec()))
}

/// Fits the plan's trainable parameters to `adapt` utterances of the plan's
/// speaker, early-stopping on `valid`. Parameters outside the plan are
/// returned bit-identical.
pub fn adapt(
    plan: &AdaptationPlan,
    kind: AdaptKind,
    adapt: &[&Utterance],
    valid: &[&Utterance],
    run: &TrainRun,
    hook: Option<EpochHook<'_>>,
) -> Result<(ModelParameters, TrainReport)> {
    require_nonempty(adapt, "adaptation")?;
    require_nonempty(valid, "adaptation validation")?;
    for u in adapt.iter().chain(valid) {
        u.validate()?;
        match (kind.needs_text(), u.linguistic.is_some()) {
            (true, false) => return Err(text(u).unwrap_err()),
            (false, true) => {
                return Err(Error::Contract(format!(
                    "{}: unsupervised adaptation must not receive linguistic frames",
                    u.id
                )))
            }
            _ => {}
        }
    }
    let speaker = plan.speaker;
    let mode = run.mode;
    let stack = if kind.needs_text() { Stack::Tts } else { Stack::Sts };
    // encoders are frozen, so their outputs are computed once
    let train_cache = adapt
        .iter()
        .map(|u| encode_frozen(&plan.model, u, kind))
        .collect::<Result<Vec<_>>>()?;
    let valid_cache = valid
        .iter()
        .map(|u| Ok(encode_stack(&plan.model, u, stack)?.0))
        .collect::<Result<Vec<_>>>()?;
    let trainable = |n: &str| plan.selects(n);
    let ids: Vec<&str> = adapt.iter().map(|u| u.id.as_str()).collect();
    optimise(
        plan.model.clone(),
        &ids,
        run,
        &trainable,
        |s, m, i, rng| cached_adapt_loss(s, m, &train_cache[i], &adapt[i].acoustic, speaker, mode, rng),
        |m| {
            let mut acc = 0.0;
            for (u, mu) in valid.iter().zip(&valid_cache) {
                let mut s = Session::inference();
                let z = s.input(mu.clone());
                let pred = dec_forward(&mut s, m, z, speaker)?;
                acc += masked_mse(s.graph.value(pred), &u.acoustic, &u.mask)?;
            }
            Ok(acc / valid.len() as f64)
        },
        hook,
    )
}

/// Latent mean and standard deviation from one frozen encoder.
fn encode_stack(model: &ModelParameters, u: &Utterance, stack: Stack) -> Result<(Tensor, Tensor)> {
    let mut s = Session::inference();
    let g = match stack {
        Stack::Tts => {
            let x = s.input(text(u)?.clone());
            lenc_forward(&mut s, model, x)?
        }
        Stack::Sts => {
            let y = s.input(u.acoustic.clone());
            aenc_forward(&mut s, model, y)?
        }
    };
    Ok((s.graph.value(g.mu).clone(), s.graph.value(g.sigma).clone()))
}

/// Encoder outputs feeding each term of an adaptation loss, in the order
/// the loss draws its samples.
fn encode_frozen(model: &ModelParameters, u: &Utterance, kind: AdaptKind) -> Result<Vec<(Stack, Tensor, Tensor)>> {
    let stacks: &[Stack] = match kind {
        AdaptKind::Supervised => &[Stack::Tts],
        AdaptKind::Unsupervised => &[Stack::Sts],
        AdaptKind::SupervisedPlus => &[Stack::Tts, Stack::Sts],
    };
    stacks
        .iter()
        .map(|&st| {
            let (mu, sigma) = encode_stack(model, u, st)?;
            Ok((st, mu, sigma))
        })
        .collect()
}

/// Same value as [`adapt_loss`] for frozen encoders, without re-running them.
fn cached_adapt_loss(
    s: &mut Session,
    model: &ModelParameters,
    latents: &[(Stack, Tensor, Tensor)],
    y: &Tensor,
    speaker: SpeakerId,
    mode: SamplingMode,
    rng: &mut SeededRng,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (stack, mu, sigma) in latents {
        let g = GaussianSequence {
            mu: s.input(mu.clone()),
            sigma: s.input(sigma.clone()),
        };
        let mode = if *stack == Stack::Tts && model.config.deterministic_latent {
            SamplingMode::Mean
        } else {
            mode
        };
        let z = sample_latent(s, g, mode, rng)?;
        let pred = dec_forward(s, model, z, speaker)?;
        let l = mse_loss(&mut s.graph, pred, y, None)?;
        total = Some(match total {
            None => l,
            Some(t) => s.graph.add(t, l)?,
        });
    }
    total.ok_or_else(|| Error::Contract("adaptation loss has no terms".into()))
}
