//! The linguistic encoder, acoustic encoder and speaker-adaptive decoder,
//! and the text-to-speech and speech-to-speech stacks built from them.

mod config;
mod model;

pub use config::NetworkConfig;
pub use model::{dec_forward, Decoder, Encoder, GaussianSequence, ModelParameters, ParamGroup};

use crate::error::{Error, Result};
use crate::layers::{Session, SpeakerId};
use crate::numcore::{Tensor, Var};
use crate::rng::{normal, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// `z = mu + sigma * eps`, `eps ~ N(0, 1)` per frame and dimension.
    Reparameterized,
    /// `z = mu`.
    Mean,
}

pub fn lenc_forward(s: &mut Session, model: &ModelParameters, x: Var) -> Result<GaussianSequence> {
    model.lenc.forward(s, model::LENC, x)
}

pub fn aenc_forward(s: &mut Session, model: &ModelParameters, y: Var) -> Result<GaussianSequence> {
    let aenc = model
        .aenc
        .as_ref()
        .ok_or_else(|| Error::Contract("model has no acoustic encoder".into()))?;
    aenc.forward(s, model::AENC, y)
}

/// Draws a latent sequence. In deterministic-latent models sampling is
/// bypassed and the mean is returned.
pub fn sample_latent(
    s: &mut Session,
    g: GaussianSequence,
    mode: SamplingMode,
    rng: &mut SeededRng,
) -> Result<Var> {
    match mode {
        SamplingMode::Mean => Ok(g.mu),
        SamplingMode::Reparameterized => {
            let shape = s.graph.value(g.mu).shape().to_vec();
            let mut eps = Tensor::zeros(&shape);
            for v in eps.data_mut() {
                *v = normal(rng);
            }
            let eps = s.input(eps);
            let noise = s.graph.mul(g.sigma, eps)?;
            s.graph.add(g.mu, noise)
        }
    }
}

fn effective_mode(model: &ModelParameters, mode: SamplingMode) -> SamplingMode {
    if model.config.deterministic_latent {
        SamplingMode::Mean
    } else {
        mode
    }
}

/// Linguistic encoder followed by the decoder.
pub fn tts_forward(
    s: &mut Session,
    model: &ModelParameters,
    x: &Tensor,
    speaker: SpeakerId,
    mode: SamplingMode,
    rng: &mut SeededRng,
) -> Result<(Var, GaussianSequence)> {
    let xv = s.input(x.clone());
    let g = lenc_forward(s, model, xv)?;
    let z = sample_latent(s, g, effective_mode(model, mode), rng)?;
    Ok((dec_forward(s, model, z, speaker)?, g))
}

/// Acoustic encoder followed by the decoder. Takes no linguistic input.
pub fn sts_forward(
    s: &mut Session,
    model: &ModelParameters,
    y: &Tensor,
    speaker: SpeakerId,
    mode: SamplingMode,
    rng: &mut SeededRng,
) -> Result<(Var, GaussianSequence)> {
    let yv = s.input(y.clone());
    let g = aenc_forward(s, model, yv)?;
    let z = sample_latent(s, g, mode, rng)?;
    Ok((dec_forward(s, model, z, speaker)?, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{HostComponents, HostLayer, BiasForm, SpeakerInit};
    use crate::rng::{normal_tensor, seeded};
    use alloc::vec;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            d_x: 5,
            d_y: 3,
            d_z: 2,
            encoder_hidden: 4,
            decoder_hidden: 6,
            ..NetworkConfig::default()
        }
    }

    fn model_with_bias(seed: u64) -> ModelParameters {
        let mut rng = seeded(seed);
        let mut m = ModelParameters::new(tiny_config(), &mut rng).unwrap();
        for i in 1..=8u8 {
            m.spk
                .add_host(HostLayer::B(i), HostComponents::new(&mut rng, 6, true, Some(BiasForm::Full), None))
                .unwrap();
        }
        m.spk.add_speaker(SpeakerId(0), SpeakerInit::Training).unwrap();
        m.spk.add_speaker(SpeakerId(1), SpeakerInit::Training).unwrap();
        let mut r = seeded(seed + 1);
        m.spk.visit_mut(&mut |name, t| {
            if name.contains("spk001") {
                *t = normal_tensor(&mut r, t.shape(), 0.5);
            }
        });
        m
    }

    #[test]
    fn zero_sigma_head_gives_unit_sigma() {
        let mut m = ModelParameters::new(tiny_config(), &mut seeded(1)).unwrap();
        m.lenc.sigma.as_mut().unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut s = Session::inference();
        let x = s.input(normal_tensor(&mut seeded(2), &[7, 5], 1.0));
        let g = lenc_forward(&mut s, &m, x).unwrap();
        assert_eq!(s.graph.value(g.mu).shape(), &[7, 2]);
        assert_eq!(s.graph.value(g.sigma), &Tensor::ones(&[7, 2]));
    }

    #[test]
    fn acoustic_encoder_shapes_and_positive_sigma() {
        for seed in 0..5 {
            let m = ModelParameters::new(tiny_config(), &mut seeded(seed)).unwrap();
            let mut s = Session::inference();
            let y = s.input(normal_tensor(&mut seeded(seed + 10), &[9, 3], 3.0));
            let g = aenc_forward(&mut s, &m, y).unwrap();
            assert_eq!(s.graph.value(g.mu).shape(), &[9, 2]);
            assert!(s.graph.value(g.sigma).data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn deterministic_latent_has_unit_sigma_and_no_acoustic_encoder() {
        let cfg = NetworkConfig {
            deterministic_latent: true,
            ..tiny_config()
        };
        let m = ModelParameters::new(cfg, &mut seeded(3)).unwrap();
        assert!(m.aenc.is_none());
        assert!(m.lenc.sigma.is_none());
        let x = normal_tensor(&mut seeded(4), &[6, 5], 1.0);
        let mut s = Session::inference();
        let (y1, g) = tts_forward(&mut s, &m, &x, SpeakerId(0), SamplingMode::Reparameterized, &mut seeded(5)).unwrap();
        assert_eq!(s.graph.value(g.sigma), &Tensor::ones(&[6, 2]));
        let (y2, _) = tts_forward(&mut s, &m, &x, SpeakerId(0), SamplingMode::Reparameterized, &mut seeded(6)).unwrap();
        assert_eq!(s.graph.value(y1), s.graph.value(y2));
        let mut s = Session::inference();
        let y = normal_tensor(&mut seeded(4), &[6, 3], 1.0);
        assert!(matches!(
            sts_forward(&mut s, &m, &y, SpeakerId(0), SamplingMode::Mean, &mut seeded(0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mean_mode_is_mu_and_tiny_sigma_collapses() {
        let mut s = Session::inference();
        let mu = s.input(Tensor::vector(vec![0.3, -0.2]));
        let sigma = s.input(Tensor::vector(vec![1e-12, 1e-12]));
        let g = GaussianSequence { mu, sigma };
        let z = sample_latent(&mut s, g, SamplingMode::Mean, &mut seeded(0)).unwrap();
        assert_eq!(z, mu);
        let z = sample_latent(&mut s, g, SamplingMode::Reparameterized, &mut seeded(0)).unwrap();
        for (a, b) in s.graph.value(z).data().iter().zip([0.3, -0.2]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn reparameterized_sample_mean_monte_carlo() {
        let n = 100_000;
        let mut s = Session::inference();
        let mu = s.input(Tensor::filled(&[n], 0.7));
        let sigma = s.input(Tensor::filled(&[n], 0.2));
        let z = sample_latent(&mut s, GaussianSequence { mu, sigma }, SamplingMode::Reparameterized, &mut seeded(77)).unwrap();
        let mean = s.graph.value(z).sum() / n as f64;
        let bound = 3.0 * 0.2 / libm::sqrt(n as f64);
        assert!((mean - 0.7).abs() < bound, "{mean}");
    }

    #[test]
    fn speakers_with_distinct_bias_decode_differently() {
        let m = model_with_bias(7);
        let z = normal_tensor(&mut seeded(8), &[10, 2], 1.0);
        let mut s = Session::inference();
        let zv = s.input(z);
        let y0 = dec_forward(&mut s, &m, zv, SpeakerId(0)).unwrap();
        let y1 = dec_forward(&mut s, &m, zv, SpeakerId(1)).unwrap();
        assert_eq!(s.graph.value(y0).shape(), &[10, 3]);
        assert!(s.graph.value(y0).sq_dist(s.graph.value(y1)) > 0.0);
        assert!(matches!(dec_forward(&mut s, &m, zv, SpeakerId(9)), Err(Error::Lookup(_))));
    }

    #[test]
    fn stripped_model_ignores_speaker_and_matches_neutral() {
        let m = model_with_bias(9);
        let stripped = m.stripped();
        let z = normal_tensor(&mut seeded(10), &[12, 2], 1.0);
        let mut s = Session::inference();
        let zv = s.input(z);
        let a = dec_forward(&mut s, &stripped, zv, SpeakerId(0)).unwrap();
        let b = dec_forward(&mut s, &stripped, zv, SpeakerId(42)).unwrap();
        assert_eq!(s.graph.value(a), s.graph.value(b));
        // speaker 0 still holds its training-time neutral components
        let c = dec_forward(&mut s, &m, zv, SpeakerId(0)).unwrap();
        assert_eq!(s.graph.value(a), s.graph.value(c));
        let d = dec_forward(&mut s, &m, zv, SpeakerId(1)).unwrap();
        assert!(s.graph.value(a).sq_dist(s.graph.value(d)) > 0.0);
    }

    #[test]
    fn tts_is_the_composition_of_its_parts() {
        let m = model_with_bias(11);
        let x = normal_tensor(&mut seeded(12), &[8, 5], 1.0);
        let mut s = Session::inference();
        let (y, _) = tts_forward(&mut s, &m, &x, SpeakerId(1), SamplingMode::Reparameterized, &mut seeded(13)).unwrap();
        let want = s.graph.value(y).clone();

        let mut s = Session::inference();
        let mut rng = seeded(13);
        let xv = s.input(x.clone());
        let g = lenc_forward(&mut s, &m, xv).unwrap();
        let z = sample_latent(&mut s, g, SamplingMode::Reparameterized, &mut rng).unwrap();
        let y = dec_forward(&mut s, &m, z, SpeakerId(1)).unwrap();
        assert_eq!(s.graph.value(y), &want);

        let mut s = Session::inference();
        let (a, _) = tts_forward(&mut s, &m, &x, SpeakerId(1), SamplingMode::Mean, &mut seeded(1)).unwrap();
        let (b, _) = tts_forward(&mut s, &m, &x, SpeakerId(1), SamplingMode::Mean, &mut seeded(2)).unwrap();
        assert_eq!(s.graph.value(a), s.graph.value(b));
    }

    #[test]
    fn voice_conversion_path_has_valid_shape() {
        let m = model_with_bias(14);
        let y_src = normal_tensor(&mut seeded(15), &[11, 3], 1.0);
        let mut s = Session::inference();
        let (y, _) = sts_forward(&mut s, &m, &y_src, SpeakerId(1), SamplingMode::Mean, &mut seeded(0)).unwrap();
        assert_eq!(s.graph.value(y).shape(), &[11, 3]);
        assert!(s.graph.value(y).all_finite());
    }

    #[test]
    fn parameter_names_are_unique() {
        let m = model_with_bias(16);
        let mut names = m.names();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(names.iter().all(|n| ParamGroup::of(n).is_some()));
    }
}
