//! The desk experiment: train A1b and BaB initial models on a synthetic
//! corpus, adapt A1b, BaB and BaB_all to every target speaker with 5, 25
//! and 100 utterances, supervised and unsupervised, and score the test split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use spkadapt_core::layers::SpeakerId;
use spkadapt_core::network::ModelParameters;
use spkadapt_core::objectives::AdaptKind;
use spkadapt_core::rng::seeded;
use spkadapt_core::strategies::{adaptation_plan, build_model};
use spkadapt_core::synthcorpus::{gen_corpus, oracle_mse, Corpus, CorpusConfig, Split, Utterance};
use spkadapt_core::trainer::{adapt, evaluate, train, Stack};

use crate::checkpoint::resolve_strategy;
use crate::config::RunConfig;
use crate::error::CliResult;

pub const STRATEGIES: [&str; 3] = ["A1b", "BaB", "BaB_all"];
pub const KINDS: [AdaptKind; 2] = [AdaptKind::Supervised, AdaptKind::Unsupervised];
pub const SIZES: [usize; 3] = [5, 25, 100];

/// One adapted model scored on one target speaker's test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub seed: u64,
    pub strategy: &'static str,
    pub kind: AdaptKind,
    pub speaker: SpeakerId,
    pub n_adapt: usize,
    pub unadapted: f64,
    pub adapted: f64,
    pub floor: f64,
    pub epochs: usize,
}

/// Initial model each adaptation strategy starts from.
fn initial_of(strategy: &str) -> &'static str {
    match strategy {
        "A1b" => "A1b",
        _ => "BaB",
    }
}

fn text_free(utts: &[&Utterance], kind: AdaptKind) -> Vec<Utterance> {
    utts.iter()
        .map(|u| if kind.needs_text() { (*u).clone() } else { u.without_text() })
        .collect()
}

/// Runs the experiment for one seed. `log` receives one line per trained
/// model and per adapted speaker.
pub fn run_seed(config: &RunConfig, seed: u64, log: &mut dyn FnMut(&str)) -> CliResult<Vec<Cell>> {
    let corpus_cfg = CorpusConfig {
        seed,
        ..CorpusConfig::from(&config.corpus)
    };
    let corpus = gen_corpus(&corpus_cfg)?;
    let net = config.network.to_network();
    corpus_cfg.check_network(&net)?;
    let base = corpus_cfg.base_speakers();

    let mut initial: BTreeMap<&str, ModelParameters> = BTreeMap::new();
    for name in ["A1b", "BaB"] {
        let t = Instant::now();
        let spec = resolve_strategy(config, name)?;
        let model = build_model(&spec, &net, &base, &mut seeded(seed))?;
        let (model, report) = train(
            model,
            &corpus.base(Split::Train),
            &corpus.base(Split::Valid),
            &config.train.to_run(seed),
            None,
        )?;
        log(&format!(
            "seed {seed} train {name}: {} epochs, best {} valid {:.4} ({:.1}s)",
            report.epochs.len(),
            report.best_epoch,
            report.best().valid_mse,
            t.elapsed().as_secs_f64()
        ));
        initial.insert(name, model);
    }

    let mut cells = Vec::new();
    for strategy in STRATEGIES {
        let spec = resolve_strategy(config, strategy)?;
        let init = &initial[initial_of(strategy)];
        for kind in KINDS {
            for speaker in corpus_cfg.target_speakers() {
                cells.extend(adapt_speaker(config, &corpus, seed, strategy, &spec, init, kind, speaker, log)?);
            }
        }
    }
    Ok(cells)
}

#[allow(clippy::too_many_arguments)]
fn adapt_speaker(
    config: &RunConfig,
    corpus: &Corpus,
    seed: u64,
    strategy: &'static str,
    spec: &spkadapt_core::strategies::StrategySpec,
    init: &ModelParameters,
    kind: AdaptKind,
    speaker: SpeakerId,
    log: &mut dyn FnMut(&str),
) -> CliResult<Vec<Cell>> {
    let plan = adaptation_plan(spec, init, speaker)?;
    let test = corpus.select(speaker, Split::Test);
    let floor = oracle_mse(&corpus.truth, &test)?;
    let same = |_: SpeakerId| speaker;
    let unadapted = evaluate(&plan.model, &test, &same, Stack::Tts)?.aggregate;
    let valid = text_free(&corpus.select(speaker, Split::Valid), kind);
    let valid: Vec<&Utterance> = valid.iter().collect();
    let mut out = Vec::new();
    let mut line = format!("seed {seed} {strategy:8} {:12} {speaker} unadapted {unadapted:.4}", kind.name());
    for n in SIZES {
        let pool = text_free(&corpus.adaptation_subset(speaker, n)?, kind);
        let pool: Vec<&Utterance> = pool.iter().collect();
        let (model, report) = adapt(&plan, kind, &pool, &valid, &config.adapt.to_run(seed), None)?;
        let adapted = evaluate(&model, &test, &same, Stack::Tts)?.aggregate;
        let _ = write!(line, " | n{n} {adapted:.4}");
        out.push(Cell {
            seed,
            strategy,
            kind,
            speaker,
            n_adapt: n,
            unadapted,
            adapted,
            floor,
            epochs: report.epochs.len(),
        });
    }
    log(&line);
    Ok(out)
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn median_of<'a>(cells: impl Iterator<Item = &'a Cell>) -> f64 {
    let mut v: Vec<f64> = cells.map(|c| c.adapted).collect();
    median(&mut v)
}

/// Outcome of one trend criterion with a human-readable account.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Summary {
    /// Adapted beats unadapted for every cell.
    pub improves: Verdict,
    /// Medians non-increasing over adaptation sizes per strategy and kind.
    pub monotone: Verdict,
    /// BaB_all has the lowest supervised median, pooled over sizes.
    pub strip_best: Verdict,
    /// No adapted MSE below the oracle floor.
    pub above_floor: Verdict,
    /// Median per (strategy, kind, size), for reporting.
    pub medians: BTreeMap<(&'static str, &'static str, usize), f64>,
}

pub fn summarize(cells: &[Cell]) -> Summary {
    let worse: Vec<&Cell> = cells.iter().filter(|c| !(c.adapted < c.unadapted)).collect();
    let improves = Verdict {
        pass: !cells.is_empty() && worse.is_empty(),
        detail: match worse.first() {
            None => format!("{} adapted models all below their unadapted MSE", cells.len()),
            Some(c) => format!(
                "{} of {} cells not improved, e.g. seed {} {} {} {} n{}: {:.4} vs {:.4}",
                worse.len(),
                cells.len(),
                c.seed,
                c.strategy,
                c.kind.name(),
                c.speaker,
                c.n_adapt,
                c.adapted,
                c.unadapted
            ),
        },
    };

    let mut medians = BTreeMap::new();
    let mut bumps = Vec::new();
    for strategy in STRATEGIES {
        for kind in KINDS {
            let m: Vec<f64> = SIZES
                .iter()
                .map(|&n| {
                    median_of(
                        cells
                            .iter()
                            .filter(|c| c.strategy == strategy && c.kind == kind && c.n_adapt == n),
                    )
                })
                .collect();
            for (i, &n) in SIZES.iter().enumerate() {
                medians.insert((strategy, kind.name(), n), m[i]);
            }
            let trend = m.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" > ");
            if m.windows(2).any(|w| w[1] > w[0]) {
                bumps.push(format!("{strategy} {}: {trend}", kind.name()));
            }
        }
    }
    let monotone = Verdict {
        pass: bumps.is_empty(),
        detail: if bumps.is_empty() {
            "medians non-increasing over 5, 25, 100 for all strategy-kind pairs".into()
        } else {
            format!("increase in {}", bumps.join("; "))
        },
    };

    let pooled: Vec<(&str, f64)> = STRATEGIES
        .iter()
        .map(|&s| {
            (
                s,
                median_of(cells.iter().filter(|c| c.strategy == s && c.kind == AdaptKind::Supervised)),
            )
        })
        .collect();
    let best = pooled.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let strip = pooled.iter().find(|p| p.0 == "BaB_all").map_or(f64::INFINITY, |p| p.1);
    let others_above = pooled.iter().filter(|p| p.0 != "BaB_all").all(|p| p.1 > strip);
    let strip_best = Verdict {
        pass: others_above && strip == best,
        detail: format!(
            "pooled supervised medians: {}",
            pooled.iter().map(|(s, v)| format!("{s} {v:.4}")).collect::<Vec<_>>().join(", ")
        ),
    };

    let below: Vec<&Cell> = cells.iter().filter(|c| c.adapted < c.floor).collect();
    let lowest = cells
        .iter()
        .map(|c| c.adapted - c.floor)
        .fold(f64::INFINITY, f64::min);
    let above_floor = Verdict {
        pass: !cells.is_empty() && below.is_empty(),
        detail: format!("{} cells below the oracle floor; smallest margin {lowest:.4}", below.len()),
    };

    Summary {
        improves,
        monotone,
        strip_best,
        above_floor,
        medians,
    }
}
