use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spkadapt_cli::commands::{self, AdaptArgs, CorpusArgs, EvalArgs, TrainArgs};
use spkadapt_cli::error::{CliError, CliResult};
use spkadapt_cli::gradsuite::Scope;
use spkadapt_core::layers::SpeakerId;
use spkadapt_core::objectives::AdaptKind;
use spkadapt_core::synthcorpus::Split;

#[derive(Parser)]
#[command(name = "spkadapt", version, about = "Speaker adaptation experiments on synthetic corpora")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus directory.
    Corpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train an initial model on the base speakers.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        strategy: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Adapt a trained model to one target speaker.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_parser = parse_speaker)]
        speaker: SpeakerId,
        #[arg(long, value_parser = parse_kind)]
        kind: AdaptKind,
        #[arg(long)]
        n: usize,
        /// Adapt with another strategy sharing the checkpoint's components,
        /// e.g. BaB_all from a BaB model.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Masked MSE of the TTS stack on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long, value_parser = parse_speaker)]
        speaker: Option<SpeakerId>,
        /// Use this speaker's components for every utterance.
        #[arg(long, value_parser = parse_speaker)]
        as_speaker: Option<SpeakerId>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Speaker footprint per strategy.
    Params {
        strategy: Option<String>,
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Full desk experiment over several seeds.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

fn parse_speaker(s: &str) -> Result<SpeakerId, String> {
    s.parse().map_err(|e: spkadapt_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<AdaptKind, String> {
    AdaptKind::parse(s).ok_or_else(|| format!("unknown kind {s:?}; expected supervised, unsupervised or supervised-plus"))
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: spkadapt_core::Error| e.to_string())
}

/// Exit code 1 reports a completed run whose checks failed.
fn run(cmd: Cmd, out: &mut dyn Write) -> CliResult<u8> {
    match cmd {
        Cmd::Corpus { config, out: dir, seed } => commands::corpus(&CorpusArgs { config, out: dir, seed }, out)?,
        Cmd::Train {
            corpus,
            strategy,
            config,
            out: path,
            metrics,
            seed,
        } => commands::train_cmd(
            &TrainArgs {
                corpus,
                strategy,
                config,
                out: path,
                metrics,
                seed,
            },
            out,
        )?,
        Cmd::Adapt {
            checkpoint,
            corpus,
            speaker,
            kind,
            n,
            strategy,
            config,
            out: path,
            metrics,
            seed,
        } => commands::adapt_cmd(
            &AdaptArgs {
                checkpoint,
                corpus,
                speaker,
                kind,
                n,
                strategy,
                config,
                out: path,
                metrics,
                seed,
            },
            out,
        )?,
        Cmd::Eval {
            checkpoint,
            corpus,
            split,
            speaker,
            as_speaker,
            jobs,
            metrics,
        } => {
            commands::eval_cmd(
                &EvalArgs {
                    checkpoint,
                    corpus,
                    split,
                    speaker,
                    as_speaker,
                    jobs,
                    metrics,
                },
                out,
            )?;
        }
        Cmd::Gradcheck { scope, seeds } => {
            let scopes = match scope.as_str() {
                "all" => Scope::ALL.to_vec(),
                s => vec![Scope::parse(s).ok_or_else(|| {
                    CliError::Usage(format!("unknown scope {s:?}; expected layers, losses, full or all"))
                })?],
            };
            if !commands::gradcheck_cmd(&scopes, seeds, out)? {
                return Ok(1);
            }
        }
        Cmd::Params {
            strategy,
            paper_scale,
            config,
        } => commands::params_cmd(strategy.as_deref(), paper_scale, config.as_deref(), out)?,
        Cmd::Experiment { config, seeds, metrics } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let s = commands::experiment_cmd(config.as_deref(), &seeds, metrics.as_deref(), out)?;
            if ![&s.improves, &s.monotone, &s.strip_best, &s.above_floor].iter().all(|v| v.pass) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    match run(cli.cmd, &mut stdout.lock()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
