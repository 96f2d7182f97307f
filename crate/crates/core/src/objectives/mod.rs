//! Loss functions for training and adaptation.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::layers::{Session, SpeakerId};
use crate::network::{
    aenc_forward, sts_forward, tts_forward, GaussianSequence, ModelParameters, SamplingMode,
};
use crate::numcore::{Graph, Tensor, Var};
use crate::rng::SeededRng;

/// Per-frame speech flags; `false` marks silence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask(pub Vec<bool>);

impl FrameMask {
    pub fn all(t_len: usize) -> Self {
        FrameMask(alloc::vec![true; t_len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn speech_frames(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

/// Mean over (unmasked) frames of `(1/D_y) sum_i (pred_i - target_i)^2`.
pub fn mse_loss(g: &mut Graph, pred: Var, target: &Tensor, mask: Option<&FrameMask>) -> Result<Var> {
    let ps = g.value(pred).shape().to_vec();
    if ps.as_slice() != target.shape() {
        return Err(dim_err("mse_loss", &ps, target.shape()));
    }
    let (t_len, d_y) = target.dims2()?;
    let tv = g.constant(target.clone());
    let diff = g.sub(pred, tv)?;
    let sq = g.square(diff);
    match mask {
        None => Ok(g.mean(sq)),
        Some(mask) => {
            if mask.len() != t_len {
                return Err(dim_err("mse mask", &[t_len], &[mask.len()]));
            }
            let n = mask.speech_frames();
            if n == 0 {
                return Err(Error::Data("every frame is masked out".into()));
            }
            let mut w = Tensor::zeros(&[t_len, d_y]);
            for (row, &keep) in w.data_mut().chunks_mut(d_y).zip(&mask.0) {
                if keep {
                    row.iter_mut().for_each(|v| *v = 1.0);
                }
            }
            let wv = g.constant(w);
            let kept = g.mul(sq, wv)?;
            let total = g.sum(kept);
            Ok(g.scale(total, 1.0 / (n * d_y) as f64))
        }
    }
}

/// Value-level masked MSE without building a graph.
pub fn masked_mse(pred: &Tensor, target: &Tensor, mask: &FrameMask) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(dim_err("masked_mse", pred.shape(), target.shape()));
    }
    let (t_len, d_y) = target.dims2()?;
    if mask.len() != t_len {
        return Err(dim_err("mse mask", &[t_len], &[mask.len()]));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for t in 0..t_len {
        if mask.0[t] {
            n += 1;
            acc += pred
                .row(t)
                .iter()
                .zip(target.row(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    if n == 0 {
        return Err(Error::Data("every frame is masked out".into()));
    }
    Ok(acc / (n * d_y) as f64)
}

/// `KL(p || q)` between diagonal Gaussians, averaged over latent dimensions
/// and frames.
pub fn kld_gaussian(g: &mut Graph, p: GaussianSequence, q: GaussianSequence) -> Result<Var> {
    let want = g.value(p.mu).shape().to_vec();
    for v in [p.sigma, q.mu, q.sigma] {
        if g.value(v).shape() != want.as_slice() {
            return Err(dim_err("kld_gaussian", &want, g.value(v).shape()));
        }
    }
    for v in [p.sigma, q.sigma] {
        if let Some(bad) = g.value(v).data().iter().find(|&&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Numeric(format!("standard deviation must be positive, got {bad}")));
        }
    }
    let lp = g.ln(p.sigma);
    let lq = g.ln(q.sigma);
    let dmu = g.sub(p.mu, q.mu)?;
    let dmu2 = g.square(dmu);
    let vp = g.square(p.sigma);
    let num = g.add(vp, dmu2)?;
    let inv_vq = g.scale(lq, -2.0);
    let inv_vq = g.exp(inv_vq);
    let frac = g.mul(num, inv_vq)?;
    let frac = g.scale(frac, 0.5);
    let log_ratio = g.sub(lq, lp)?;
    let kl = g.add(log_ratio, frac)?;
    let kl = g.add_scalar(kl, -0.5);
    Ok(g.mean(kl))
}

/// Closed-form KL divergence of two scalar Gaussians.
pub fn kld_scalar(mu_p: f64, sigma_p: f64, mu_q: f64, sigma_q: f64) -> f64 {
    libm::log(sigma_q / sigma_p) + (sigma_p * sigma_p + (mu_p - mu_q) * (mu_p - mu_q)) / (2.0 * sigma_q * sigma_q)
        - 0.5
}

/// Handles of the three training-loss terms.
#[derive(Debug, Clone, Copy)]
pub struct TrainLoss {
    pub total: Var,
    pub main: Var,
    pub tie: Var,
}

/// `main + beta * tie`: TTS reconstruction plus the KL tie between the
/// linguistic and acoustic latent distributions.
#[allow(clippy::too_many_arguments)]
pub fn train_loss(
    s: &mut Session,
    model: &ModelParameters,
    x: &Tensor,
    y: &Tensor,
    speaker: SpeakerId,
    beta: f64,
    mode: SamplingMode,
    rng: &mut SeededRng,
) -> Result<TrainLoss> {
    if beta < 0.0 || !beta.is_finite() {
        return Err(Error::Parameter(format!("beta must be a non-negative number, got {beta}")));
    }
    let (pred, p) = tts_forward(s, model, x, speaker, mode, rng)?;
    let main = mse_loss(&mut s.graph, pred, y, None)?;
    let tie = if model.aenc.is_some() {
        let yv = s.input(y.clone());
        let q = aenc_forward(s, model, yv)?;
        kld_gaussian(&mut s.graph, p, q)?
    } else {
        s.input(Tensor::scalar(0.0))
    };
    let total = if beta == 0.0 {
        main
    } else {
        let weighted = s.graph.scale(tie, beta);
        s.graph.add(main, weighted)?
    };
    Ok(TrainLoss { total, main, tie })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptKind {
    /// Transcribed speech through the TTS stack.
    Supervised,
    /// Untranscribed speech through the STS stack.
    Unsupervised,
    /// Transcribed speech through both stacks, losses summed.
    SupervisedPlus,
}

impl AdaptKind {
    pub fn needs_text(self) -> bool {
        !matches!(self, AdaptKind::Unsupervised)
    }

    pub fn name(self) -> &'static str {
        match self {
            AdaptKind::Supervised => "supervised",
            AdaptKind::Unsupervised => "unsupervised",
            AdaptKind::SupervisedPlus => "supervised-plus",
        }
    }

    pub fn parse(s: &str) -> Option<AdaptKind> {
        match s {
            "supervised" => Some(AdaptKind::Supervised),
            "unsupervised" => Some(AdaptKind::Unsupervised),
            "supervised-plus" | "supervised_plus" => Some(AdaptKind::SupervisedPlus),
            _ => None,
        }
    }
}

/// Adaptation objective. The session decides which parameters are trainable.
#[allow(clippy::too_many_arguments)]
pub fn adapt_loss(
    s: &mut Session,
    model: &ModelParameters,
    kind: AdaptKind,
    x: Option<&Tensor>,
    y: &Tensor,
    speaker: SpeakerId,
    mode: SamplingMode,
    rng: &mut SeededRng,
) -> Result<Var> {
    match (kind, x) {
        (AdaptKind::Unsupervised, Some(_)) => Err(Error::Contract(
            "unsupervised adaptation must not receive linguistic features".into(),
        )),
        (AdaptKind::Supervised | AdaptKind::SupervisedPlus, None) => Err(Error::Contract(format!(
            "{} adaptation requires linguistic features",
            kind.name()
        ))),
        (AdaptKind::Unsupervised, None) => {
            let (pred, _) = sts_forward(s, model, y, speaker, mode, rng)?;
            mse_loss(&mut s.graph, pred, y, None)
        }
        (AdaptKind::Supervised, Some(x)) => {
            let (pred, _) = tts_forward(s, model, x, speaker, mode, rng)?;
            mse_loss(&mut s.graph, pred, y, None)
        }
        (AdaptKind::SupervisedPlus, Some(x)) => {
            let (pl, _) = tts_forward(s, model, x, speaker, mode, rng)?;
            let ll = mse_loss(&mut s.graph, pl, y, None)?;
            let (pa, _) = sts_forward(s, model, y, speaker, mode, rng)?;
            let la = mse_loss(&mut s.graph, pa, y, None)?;
            s.graph.add(ll, la)
        }
    }
}
