use std::collections::BTreeSet;

use proptest::prelude::*;
use spkadapt_core::layers::{Session, SpeakerId};
use spkadapt_core::network::{GaussianSequence, ModelParameters, NetworkConfig, ParamGroup, SamplingMode};
use spkadapt_core::numcore::{Graph, Tensor};
use spkadapt_core::objectives::{adapt_loss, kld_gaussian, masked_mse, mse_loss, train_loss, AdaptKind, FrameMask};
use spkadapt_core::rng::{normal_tensor, seeded};
use spkadapt_core::strategies::{adaptation_plan, build_model, lookup};

fn net() -> NetworkConfig {
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

fn model(strategy: &str) -> ModelParameters {
    build_model(&lookup(strategy).unwrap(), &net(), &[SpeakerId(0), SpeakerId(1)], &mut seeded(8)).unwrap()
}

fn kl(mu_p: &[f64], s_p: &[f64], mu_q: &[f64], s_q: &[f64]) -> f64 {
    let mut g = Graph::new();
    let n = mu_p.len();
    let mut t = |v: &[f64]| g.constant(Tensor::new(vec![1, n], v.to_vec()).unwrap());
    let (a, b, c, d) = (t(mu_p), t(s_p), t(mu_q), t(s_q));
    let k = kld_gaussian(&mut g, GaussianSequence { mu: a, sigma: b }, GaussianSequence { mu: c, sigma: d }).unwrap();
    g.value(k).data()[0]
}

fn mse(pred: &Tensor, y: &Tensor, mask: Option<&FrameMask>) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let l = mse_loss(&mut g, p, y, mask).unwrap();
    g.value(l).data()[0]
}

fn gaussians(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-5.0..5.0f64, n), prop::collection::vec(-3.0..3.0f64, n))
        .prop_map(|(mu, ls)| (mu, ls.into_iter().map(f64::exp).collect()))
}

proptest! {
    #[test]
    fn kld_is_zero_on_the_diagonal_and_never_negative((mp, sp) in gaussians(5), (mq, sq) in gaussians(5)) {
        prop_assert!(kl(&mp, &sp, &mp, &sp).abs() <= 1e-12);
        prop_assert!(kl(&mp, &sp, &mq, &sq) >= 0.0);
    }

    #[test]
    fn mse_ignores_frame_order(seed in 0u64..1000, rot in 1usize..6) {
        let mut rng = seeded(seed);
        let pred = normal_tensor(&mut rng, &[6, 3], 1.0);
        let y = normal_tensor(&mut rng, &[6, 3], 1.0);
        let mask = FrameMask(vec![true, false, true, true, false, true]);
        let roll = |t: &Tensor| {
            let mut d = t.data().to_vec();
            d.rotate_left(3 * rot);
            Tensor::new(vec![6, 3], d).unwrap()
        };
        let mut m2 = mask.0.clone();
        m2.rotate_left(rot);
        let m2 = FrameMask(m2);
        let a = mse(&pred, &y, Some(&mask));
        let b = mse(&roll(&pred), &roll(&y), Some(&m2));
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert!((mse(&pred, &y, None) - mse(&roll(&pred), &roll(&y), None)).abs() <= 1e-12);
        prop_assert!((masked_mse(&pred, &y, &mask).unwrap() - a).abs() <= 1e-12);
    }
}

#[test]
fn mse_is_zero_only_when_unmasked_frames_match() {
    let y = normal_tensor(&mut seeded(2), &[4, 4], 1.0);
    let mut pred = y.clone();
    assert_eq!(mse(&pred, &y, None), 0.0);
    pred.data_mut()[5] += 1e-3; // frame 1
    assert!(mse(&pred, &y, None) > 0.0);
    assert_eq!(mse(&pred, &y, Some(&FrameMask(vec![true, false, true, true]))), 0.0);
    assert!(mse(&pred, &y, Some(&FrameMask(vec![false, true, false, false]))) > 0.0);
    // all-ones error over D_y = 4
    assert_eq!(mse(&y.map(|v| v + 1.0), &y, None), 1.0);
}

/// Closed form against composite Simpson quadrature of p log(p / q).
#[test]
fn kld_matches_numeric_integration() {
    let integrate = |mp: f64, sp: f64, mq: f64, sq: f64| {
        let lpdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let (lo, hi, n) = (mp - 14.0 * sp, mp + 14.0 * sp, 20_000);
        let h = (hi - lo) / n as f64;
        let f = |x: f64| {
            let lp = lpdf(x, mp, sp);
            lp.exp() * (lp - lpdf(x, mq, sq))
        };
        let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
        (f(lo) + f(hi) + inner) * h / 3.0
    };
    assert!((kl(&[1.0], &[1.0], &[0.0], &[1.0]) - 0.5).abs() < 1e-12);
    for (mp, sp, mq, sq) in [(1.0, 1.0, 0.0, 1.0), (0.3, 0.5, -0.4, 1.7), (-2.0, 2.0, 1.0, 0.6)] {
        let closed = kl(&[mp], &[sp], &[mq], &[sq]);
        assert!((closed - integrate(mp, sp, mq, sq)).abs() < 1e-6, "{mp} {sp} {mq} {sq}");
    }
}

fn sample() -> (Tensor, Tensor) {
    let mut rng = seeded(21);
    (normal_tensor(&mut rng, &[7, 4], 1.0), normal_tensor(&mut rng, &[7, 3], 1.0))
}

fn groups_with_grads(s: &Session) -> BTreeSet<String> {
    s.grads()
        .into_iter()
        .filter(|(_, g)| g.iter().any(|v| *v != 0.0))
        .map(|(n, _)| format!("{:?}", ParamGroup::of(&n).unwrap()))
        .collect()
}

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn train_loss_combines_main_and_tie() {
    let m = model("BaB");
    let (x, y) = sample();
    let mut s = Session::training_all();
    let r = train_loss(&mut s, &m, &x, &y, SpeakerId(1), 0.25, SamplingMode::Mean, &mut seeded(0)).unwrap();
    let (total, main, tie) = (s.graph.value(r.total).data()[0], s.graph.value(r.main).data()[0], s.graph.value(r.tie).data()[0]);
    assert!(tie > 0.0);
    assert!((total - (main + 0.25 * tie)).abs() < 1e-15);
    assert!((0.5f64 + 0.25 * 0.8 - 0.7).abs() < 1e-15);
    s.graph.backward(r.total).unwrap();
    assert_eq!(groups_with_grads(&s), set(&["AcousticEncoder", "DecoderCore", "LinguisticEncoder", "Speaker"]));

    let mut s = Session::training_all();
    let r = train_loss(&mut s, &m, &x, &y, SpeakerId(1), 0.0, SamplingMode::Mean, &mut seeded(0)).unwrap();
    assert_eq!(s.graph.value(r.total), s.graph.value(r.main));
    s.graph.backward(r.total).unwrap();
    assert_eq!(groups_with_grads(&s), set(&["DecoderCore", "LinguisticEncoder", "Speaker"]));
    assert!(train_loss(&mut Session::inference(), &m, &x, &y, SpeakerId(1), -1.0, SamplingMode::Mean, &mut seeded(0)).is_err());
}

#[test]
fn supervised_plus_is_the_sum_of_both_stacks() {
    let m = model("A3a");
    let (x, y) = sample();
    let value = |kind: AdaptKind, x: Option<&Tensor>| {
        let mut s = Session::inference();
        let l = adapt_loss(&mut s, &m, kind, x, &y, SpeakerId(0), SamplingMode::Mean, &mut seeded(3)).unwrap();
        s.graph.value(l).data()[0]
    };
    let plus = value(AdaptKind::SupervisedPlus, Some(&x));
    let sum = value(AdaptKind::Supervised, Some(&x)) + value(AdaptKind::Unsupervised, None);
    assert!((plus - sum).abs() < 1e-15, "{plus} vs {sum}");
}

#[test]
fn perfect_decoder_gives_zero_unsupervised_loss() {
    let mut m = model("BaB");
    let row = [0.3, -1.2, 0.7];
    m.dec.a4.w = Tensor::zeros(m.dec.a4.w.shape());
    m.dec.a4.c = Tensor::vector(row.to_vec());
    let y = Tensor::new(vec![5, 3], row.repeat(5)).unwrap();
    let mut s = Session::inference();
    let l = adapt_loss(&mut s, &m, AdaptKind::Unsupervised, None, &y, SpeakerId(0), SamplingMode::Reparameterized, &mut seeded(0)).unwrap();
    assert_eq!(s.graph.value(l).data()[0], 0.0);
}

#[test]
fn gradient_presence_per_adaptation_kind() {
    let (x, y) = sample();
    let m = model("BaB");
    // reachability with everything trainable
    let reach = [
        (AdaptKind::Supervised, &["DecoderCore", "LinguisticEncoder", "Speaker"][..]),
        (AdaptKind::Unsupervised, &["AcousticEncoder", "DecoderCore", "Speaker"][..]),
        (AdaptKind::SupervisedPlus, &["AcousticEncoder", "DecoderCore", "LinguisticEncoder", "Speaker"][..]),
    ];
    for (kind, want) in reach {
        let mut s = Session::training_all();
        let xs = kind.needs_text().then_some(&x);
        let l = adapt_loss(&mut s, &m, kind, xs, &y, SpeakerId(1), SamplingMode::Reparameterized, &mut seeded(1)).unwrap();
        s.graph.backward(l).unwrap();
        assert_eq!(groups_with_grads(&s), set(want), "{kind:?}");
    }
    // under a plan, encoders never receive gradients
    for (strategy, want) in [("BaB", "Speaker"), ("BaB_all", "DecoderCore"), ("A1b", "Speaker")] {
        let init = model(if strategy == "A1b" { "A1b" } else { "BaB" });
        let plan = adaptation_plan(&lookup(strategy).unwrap(), &init, SpeakerId(1000)).unwrap();
        for kind in [AdaptKind::Supervised, AdaptKind::Unsupervised, AdaptKind::SupervisedPlus] {
            let mut s = Session::with_selection(|n| plan.selects(n));
            let xs = kind.needs_text().then_some(&x);
            let l = adapt_loss(&mut s, &plan.model, kind, xs, &y, SpeakerId(1000), SamplingMode::Reparameterized, &mut seeded(1))
                .unwrap();
            s.graph.backward(l).unwrap();
            assert_eq!(groups_with_grads(&s), set(&[want]), "{strategy} {kind:?}");
            assert!(s.grads().keys().all(|k| plan.selects(k)));
        }
    }
}
