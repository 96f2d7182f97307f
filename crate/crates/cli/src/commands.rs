//! Command implementations. Each writes its human-readable report to `out`
//! and returns an error carrying the process exit code.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use spkadapt_core::layers::SpeakerId;
use spkadapt_core::network::NetworkConfig;
use spkadapt_core::objectives::AdaptKind;
use spkadapt_core::rng::seeded;
use spkadapt_core::strategies::{adaptation_plan, build_model, footprint_label, registry_with, speaker_footprint};
use spkadapt_core::synthcorpus::{gen_corpus, CorpusConfig, Split, Utterance, TARGET_ID_BASE};
use spkadapt_core::trainer::{adapt, split_adaptation_pool, train, EpochRecord, Stack};

use crate::checkpoint::{resolve_strategy, Checkpoint};
use crate::config::RunConfig;
use crate::corpus_io::{load_corpus, write_corpus};
use crate::error::{CliError, CliResult};
use crate::experiment;
use crate::gradsuite::{self, Scope};
use crate::metrics::{write_rows, MetricsRow};
use crate::parallel::evaluate_jobs;

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> CliResult<()> {
    writeln!(out, "{}", line.as_ref()).map_err(CliError::io("<stdout>"))
}

fn parent_must_exist(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError::Io {
            path: p.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
        }),
        _ => Ok(()),
    }
}

fn run_id(prefix: &str, seed: u64) -> String {
    format!("{prefix}-s{seed}")
}

pub struct CorpusArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

pub fn corpus(args: &CorpusArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let mut cc = CorpusConfig::from(&cfg.corpus);
    if let Some(s) = args.seed {
        cc.seed = s;
    }
    cc.validate().map_err(|e| CliError::Usage(format!("invalid corpus config: {e}")))?;
    parent_must_exist(&args.out)?;
    let corpus = gen_corpus(&cc)?;
    write_corpus(&args.out, &corpus)?;
    let frames: usize = corpus.utterances.iter().map(Utterance::frames).sum();
    say(
        out,
        format!(
            "wrote {}: {} speakers ({} base, {} target), {} utterances, {} frames",
            args.out.display(),
            corpus.speakers().len(),
            cc.n_base_speakers,
            cc.n_target_speakers,
            corpus.utterances.len(),
            frames
        ),
    )?;
    for split in [Split::Train, Split::Valid, Split::Test] {
        say(out, format!("  {split}: {} utterances", corpus.split(split).len()))?;
    }
    Ok(())
}

pub struct TrainArgs {
    pub corpus: PathBuf,
    pub strategy: String,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub metrics: Option<PathBuf>,
    pub seed: u64,
}

pub fn train_cmd(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let spec = resolve_strategy(&cfg, &args.strategy)?;
    let net = cfg.network.to_network();
    let corpus = load_corpus(&args.corpus, false)?;
    corpus.config.check_network(&net)?;
    let is_base = |u: &&Utterance| u.speaker.0 < TARGET_ID_BASE;
    let train_set: Vec<&Utterance> = corpus.split(Split::Train).into_iter().filter(is_base).collect();
    let valid_set: Vec<&Utterance> = corpus.split(Split::Valid).into_iter().filter(is_base).collect();
    let mut speakers: Vec<SpeakerId> = train_set.iter().map(|u| u.speaker).collect();
    speakers.sort();
    speakers.dedup();
    let model = build_model(&spec, &net, &speakers, &mut seeded(args.seed))?;
    parent_must_exist(&args.out)?;

    let t0 = Instant::now();
    let id = run_id(&format!("train-{}", args.strategy), args.seed);
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut hook = |r: &EpochRecord| {
        lines.push(format!("epoch {:3}  train {:.5}  valid {:.5}", r.epoch, r.train_loss, r.valid_mse));
        rows.push(MetricsRow {
            run_id: id.clone(),
            mode: "train".into(),
            strategy: args.strategy.clone(),
            speaker: "all".into(),
            n_adapt: None,
            epoch: Some(r.epoch),
            split: "valid".into(),
            mse: r.valid_mse,
            seconds: t0.elapsed().as_secs_f64(),
        });
    };
    let (model, report) = train(model, &train_set, &valid_set, &cfg.train.to_run(args.seed), Some(&mut hook))?;
    for l in &lines {
        say(out, l)?;
    }
    Checkpoint::new(cfg, &args.strategy, model).save(&args.out)?;
    if let Some(m) = &args.metrics {
        write_rows(m, &rows)?;
    }
    say(
        out,
        format!(
            "best epoch {} valid {:.5}; wrote {}",
            report.best_epoch,
            report.best().valid_mse,
            args.out.display()
        ),
    )
}

pub struct AdaptArgs {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub speaker: SpeakerId,
    pub kind: AdaptKind,
    pub n: usize,
    pub strategy: Option<String>,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub metrics: Option<PathBuf>,
    pub seed: u64,
}

pub fn adapt_cmd(args: &AdaptArgs, out: &mut dyn Write) -> CliResult<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => ckpt.config.clone(),
    };
    // the network and registry must describe the stored model
    cfg.network = ckpt.config.network.clone();
    cfg.registry = ckpt.config.registry.clone();
    let strategy = args.strategy.clone().unwrap_or_else(|| ckpt.strategy.clone());
    let spec = resolve_strategy(&cfg, &strategy)?;
    if resolve_strategy(&cfg, &ckpt.strategy)?.placements != spec.placements {
        return Err(CliError::Usage(format!(
            "strategy {strategy} places speaker components differently from the checkpoint's {}",
            ckpt.strategy
        )));
    }

    // unsupervised adaptation never opens linguistic files
    let corpus = load_corpus(&args.corpus, !args.kind.needs_text())?;
    let pool_all = corpus.select(args.speaker, Split::Train);
    if pool_all.len() < args.n || args.n == 0 {
        return Err(CliError::Usage(format!(
            "{} has {} adaptation utterances, --n {} requested",
            args.speaker,
            pool_all.len(),
            args.n
        )));
    }
    let pool = &pool_all[..args.n];
    if args.kind.needs_text() {
        if let Some(u) = pool.iter().find(|u| u.linguistic.is_none()) {
            return Err(CliError::Usage(format!(
                "{} adaptation needs linguistic frames but {} has none",
                args.kind.name(),
                u.id
            )));
        }
    }
    let held = corpus.select(args.speaker, Split::Valid);
    let usable_held = !held.is_empty() && (!args.kind.needs_text() || held.iter().all(|u| u.linguistic.is_some()));
    let (train_set, valid_set) = if usable_held {
        (pool.to_vec(), held)
    } else {
        split_adaptation_pool(pool, cfg.adapt.options())?
    };

    let plan = adaptation_plan(&spec, &ckpt.model, args.speaker)?;
    parent_must_exist(&args.out)?;
    let t0 = Instant::now();
    let id = run_id(&format!("adapt-{strategy}-{}-{}-n{}", args.kind.name(), args.speaker, args.n), args.seed);
    let mut rows = Vec::new();
    let mut hook = |r: &EpochRecord| {
        rows.push(MetricsRow {
            run_id: id.clone(),
            mode: format!("adapt-{}", args.kind.name()),
            strategy: strategy.clone(),
            speaker: args.speaker.to_string(),
            n_adapt: Some(args.n),
            epoch: Some(r.epoch),
            split: "valid".into(),
            mse: r.valid_mse,
            seconds: t0.elapsed().as_secs_f64(),
        });
    };
    let (model, report) = adapt(&plan, args.kind, &train_set, &valid_set, &cfg.adapt.to_run(args.seed), Some(&mut hook))?;
    Checkpoint::new(cfg, &strategy, model).save(&args.out)?;
    if let Some(m) = &args.metrics {
        write_rows(m, &rows)?;
    }
    say(
        out,
        format!(
            "adapted {strategy} to {} ({}, {} utterances, {} scalars): {} epochs, best {} valid {:.5}; wrote {}",
            args.speaker,
            args.kind.name(),
            args.n,
            plan.scalars(),
            report.epochs.len(),
            report.best_epoch,
            report.best().valid_mse,
            args.out.display()
        ),
    )
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub split: Split,
    pub speaker: Option<SpeakerId>,
    pub as_speaker: Option<SpeakerId>,
    pub jobs: usize,
    pub metrics: Option<PathBuf>,
}

/// Aggregate MSE plus the metric rows written by `eval`.
pub fn eval_cmd(args: &EvalArgs, out: &mut dyn Write) -> CliResult<f64> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let corpus = load_corpus(&args.corpus, false)?;
    let known = |s: SpeakerId| ckpt.model.spk.is_empty() || ckpt.model.spk.contains(s);
    let utts: Vec<&Utterance> = corpus
        .split(args.split)
        .into_iter()
        .filter(|u| args.speaker.is_none_or(|s| u.speaker == s))
        .filter(|u| args.as_speaker.is_some() || known(u.speaker))
        .collect();
    if utts.is_empty() {
        return Err(CliError::Usage(format!(
            "no {} utterances of speakers known to the checkpoint (use --as-speaker)",
            args.split
        )));
    }
    if let Some(u) = utts.iter().find(|u| u.linguistic.is_none()) {
        return Err(CliError::Usage(format!("evaluation uses the TTS stack but {} has no linguistic frames", u.id)));
    }
    let target = args.as_speaker;
    let map = move |s: SpeakerId| target.unwrap_or(s);
    let t0 = Instant::now();
    let report = evaluate_jobs(&ckpt.model, &utts, &map, Stack::Tts, args.jobs)?;
    let secs = t0.elapsed().as_secs_f64();
    let id = format!("eval-{}-{}", ckpt.strategy, args.split);
    let row = |speaker: String, mse: f64| MetricsRow {
        run_id: id.clone(),
        mode: "eval".into(),
        strategy: ckpt.strategy.clone(),
        speaker,
        n_adapt: None,
        epoch: None,
        split: args.split.to_string(),
        mse,
        seconds: secs,
    };
    let mut rows: Vec<MetricsRow> = report.per_speaker.iter().map(|(s, v)| row(s.to_string(), *v)).collect();
    rows.push(row("all".into(), report.aggregate));
    for r in &rows {
        say(out, format!("{:8} {:.6}", r.speaker, r.mse))?;
    }
    if let Some(m) = &args.metrics {
        write_rows(m, &rows)?;
    }
    Ok(report.aggregate)
}

/// Returns whether every check passed.
pub fn gradcheck_cmd(scopes: &[Scope], seeds: usize, out: &mut dyn Write) -> CliResult<bool> {
    let t0 = Instant::now();
    let mut all = true;
    for &scope in scopes {
        for r in gradsuite::run_scope(scope, seeds)? {
            all &= r.passed();
            say(
                out,
                format!(
                    "{} {:7} {:24} seeds {:3} worst {:.3e} ({:.2}s)",
                    if r.passed() { "PASS" } else { "FAIL" },
                    scope.name(),
                    r.name,
                    r.seeds,
                    r.worst,
                    r.seconds
                ),
            )?;
        }
    }
    say(out, format!("total {:.2}s", t0.elapsed().as_secs_f64()))?;
    Ok(all)
}

/// Footprint table. `None` lists every registered strategy.
pub fn params_cmd(strategy: Option<&str>, paper_scale: bool, config: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let net = if paper_scale {
        NetworkConfig::paper_scale()
    } else {
        cfg.network.to_network()
    };
    let reg = registry_with((&cfg.registry).into());
    let names: Vec<String> = match strategy {
        Some(s) => vec![resolve_strategy(&cfg, s).map(|spec| spec.name.to_string())?],
        None => reg.keys().cloned().collect(),
    };
    say(out, format!("{:10} {:>10} {:>8}", "strategy", "footprint", "total"))?;
    for name in names {
        let spec = &reg[&name];
        let label = footprint_label(spec, &net)?;
        let total = speaker_footprint(spec, &net)?;
        say(out, format!("{name:10} {label:>10} {total:>8}"))?;
    }
    Ok(())
}

/// Returns the summary so callers can decide the exit code.
pub fn experiment_cmd(
    config: Option<&Path>,
    seeds: &[u64],
    metrics: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<experiment::Summary> {
    let cfg = RunConfig::load_or_default(config)?;
    let t0 = Instant::now();
    let mut cells = Vec::new();
    for &seed in seeds {
        let mut lines = Vec::new();
        cells.extend(experiment::run_seed(&cfg, seed, &mut |l| lines.push(l.to_string()))?);
        for l in lines {
            say(out, l)?;
        }
    }
    let s = experiment::summarize(&cells);
    for ((strategy, kind, n), m) in &s.medians {
        say(out, format!("median {strategy:8} {kind:12} n{n:<3} {m:.4}"))?;
    }
    for (tag, v) in [("a", &s.improves), ("b", &s.monotone), ("c", &s.strip_best), ("d", &s.above_floor)] {
        say(out, format!("({tag}) {} {}", if v.pass { "PASS" } else { "FAIL" }, v.detail))?;
    }
    say(out, format!("total {:.1}s", t0.elapsed().as_secs_f64()))?;
    if let Some(p) = metrics {
        let rows: Vec<MetricsRow> = cells
            .iter()
            .map(|c| MetricsRow {
                run_id: format!("experiment-s{}", c.seed),
                mode: format!("adapt-{}", c.kind.name()),
                strategy: c.strategy.into(),
                speaker: c.speaker.to_string(),
                n_adapt: Some(c.n_adapt),
                epoch: None,
                split: "test".into(),
                mse: c.adapted,
                seconds: 0.0,
            })
            .collect();
        write_rows(p, &rows)?;
    }
    Ok(s)
}
