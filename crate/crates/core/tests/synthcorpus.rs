use nalgebra::{DMatrix, DVector};
use spkadapt_core::layers::SpeakerId;
use spkadapt_core::synthcorpus::{gen_corpus, oracle_mse, CorpusConfig, Split, Utterance};

fn config(seed: u64, noise: f64) -> CorpusConfig {
    CorpusConfig {
        seed,
        noise,
        n_base_speakers: 2,
        base_utterances: 4,
        base_valid: 1,
        n_target_speakers: 2,
        target_adapt: 300,
        target_valid: 3,
        target_test: 10,
        ..CorpusConfig::default()
    }
}

#[test]
fn oracle_floor_matches_noise_variance() {
    let c = gen_corpus(&config(11, 0.1)).unwrap();
    let utts: Vec<&Utterance> = c.select(SpeakerId(1000), Split::Train);
    let frames: usize = utts.iter().map(|u| u.mask.speech_frames()).sum();
    assert!(frames >= 10_000, "{frames}");
    let floor = oracle_mse(&c.truth, &utts).unwrap();
    assert!((floor - 0.01).abs() < 0.001, "{floor}");
}

#[test]
fn scale_and_bias_recoverable_by_least_squares() {
    let c = gen_corpus(&config(12, 0.0)).unwrap();
    let d = c.config.d_y;
    for spk in [SpeakerId(0), SpeakerId(1001)] {
        let utts = c.select(spk, Split::Train);
        let mut gs = Vec::new();
        let mut ys = Vec::new();
        for u in utts.iter().take(3) {
            let g = c.truth.g(u.linguistic.as_ref().unwrap()).unwrap();
            for t in 0..u.frames() {
                gs.push(g.row(t).to_vec());
                ys.push(u.acoustic.row(t).to_vec());
            }
        }
        let n = gs.len();
        assert!(n >= 50);
        // y = A g + b with A = M diag(alpha)
        let design = DMatrix::from_fn(n, d + 1, |r, k| if k < d { gs[r][k] } else { 1.0 });
        let tr = c.truth.transform(spk).unwrap();
        let m = DMatrix::from_row_slice(d, d, tr.mixing.data());
        let m_inv = m.try_inverse().unwrap();
        let svd = design.clone().svd(true, true);
        let mut a = DMatrix::zeros(d, d);
        for i in 0..d {
            let target = DVector::from_iterator(n, ys.iter().map(|y| y[i]));
            let coef = svd.solve(&target, 1e-12).unwrap();
            for k in 0..d {
                a[(i, k)] = coef[k];
            }
            assert!((coef[d] - tr.beta[i]).abs() < 1e-2, "beta {i}");
        }
        let unmixed = m_inv * a;
        for i in 0..d {
            assert!((unmixed[(i, i)] - tr.alpha[i]).abs() < 1e-2, "alpha {i}");
        }
    }
}
