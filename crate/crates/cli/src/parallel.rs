//! Evaluation spread over a rayon pool. Per-utterance values are collected
//! in input order and reduced exactly as the serial path does, so the
//! aggregates do not depend on the number of jobs.

use rayon::prelude::*;
use spkadapt_core::layers::SpeakerId;
use spkadapt_core::network::ModelParameters;
use spkadapt_core::synthcorpus::Utterance;
use spkadapt_core::trainer::{evaluate, evaluate_utterance, EvalReport, Stack};

use crate::error::{CliError, CliResult};

pub fn evaluate_jobs(
    model: &ModelParameters,
    utts: &[&Utterance],
    speaker_map: &(dyn Fn(SpeakerId) -> SpeakerId + Sync),
    stack: Stack,
    jobs: usize,
) -> CliResult<EvalReport> {
    if jobs <= 1 {
        return Ok(evaluate(model, utts, speaker_map, stack)?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} worker threads: {e}")))?;
    let values = pool.install(|| {
        utts.par_iter()
            .map(|u| evaluate_utterance(model, u, speaker_map(u.speaker), stack))
            .collect::<spkadapt_core::Result<Vec<f64>>>()
    })?;
    Ok(EvalReport::from_values(utts, values)?)
}
