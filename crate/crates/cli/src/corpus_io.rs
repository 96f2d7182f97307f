//! On-disk corpus layout:
//!
//! ```text
//! corpus.json          generator config echo
//! truth.json           ground-truth transform (optional)
//! manifest.jsonl       one utterance per line
//! tensors/{id}.x.adsy  linguistic frames (may be absent)
//! tensors/{id}.y.adsy  acoustic frames
//! tensors/{id}.mask.adsy  1 for speech frames, 0 for silence
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use spkadapt_core::layers::SpeakerId;
use spkadapt_core::numcore::Tensor;
use spkadapt_core::objectives::FrameMask;
use spkadapt_core::synthcorpus::{Corpus, CorpusConfig, GroundTruth, SpeakerTransform, Split, Utterance};

use crate::config::CorpusSection;
use crate::error::{CliError, CliResult};
use crate::tensorfile;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    speaker: String,
    split: String,
    frames: usize,
}

/// A corpus read back from disk. `truth` is only present for generated corpora.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub config: CorpusConfig,
    pub truth: Option<GroundTruth>,
    pub utterances: Vec<Utterance>,
}

impl LoadedCorpus {
    pub fn select(&self, speaker: SpeakerId, split: Split) -> Vec<&Utterance> {
        self.utterances
            .iter()
            .filter(|u| u.speaker == speaker && u.split == split)
            .collect()
    }

    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }

    pub fn speakers(&self) -> Vec<SpeakerId> {
        let mut s: Vec<_> = self.utterances.iter().map(|u| u.speaker).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn has_text(&self) -> bool {
        self.utterances.iter().any(|u| u.linguistic.is_some())
    }
}

pub fn tensor_path(dir: &Path, id: &str, kind: &str) -> PathBuf {
    dir.join("tensors").join(format!("{id}.{kind}.adsy"))
}

fn tensor_json(t: &Tensor) -> serde_json::Value {
    json!({ "shape": t.shape(), "data": t.data() })
}

fn json_tensor(v: &serde_json::Value, path: &Path) -> CliResult<Tensor> {
    let shape: Vec<usize> = serde_json::from_value(v["shape"].clone()).map_err(|e| CliError::format(path, e.to_string()))?;
    let data: Vec<f64> = serde_json::from_value(v["data"].clone()).map_err(|e| CliError::format(path, e.to_string()))?;
    Tensor::new(shape, data).map_err(|e| CliError::format(path, e.to_string()))
}

fn truth_json(t: &GroundTruth) -> serde_json::Value {
    let speakers: Vec<_> = t
        .speakers
        .iter()
        .map(|(id, s)| {
            json!({
                "speaker": id.to_string(),
                "alpha": s.alpha,
                "beta": s.beta,
                "mixing": tensor_json(&s.mixing),
            })
        })
        .collect();
    json!({
        "w1": tensor_json(&t.w1),
        "b1": t.b1,
        "w2": tensor_json(&t.w2),
        "noise": t.noise,
        "speakers": speakers,
    })
}

fn parse_truth(v: &serde_json::Value, path: &Path) -> CliResult<GroundTruth> {
    let bad = |d: String| CliError::format(path, d);
    let floats = |v: &serde_json::Value| -> CliResult<Vec<f64>> {
        serde_json::from_value(v.clone()).map_err(|e| bad(e.to_string()))
    };
    let mut speakers = Vec::new();
    for s in v["speakers"].as_array().ok_or_else(|| bad("speakers must be a list".into()))? {
        let id: SpeakerId = s["speaker"]
            .as_str()
            .unwrap_or_default()
            .parse()
            .map_err(|e: spkadapt_core::Error| bad(e.to_string()))?;
        speakers.push((
            id,
            SpeakerTransform {
                alpha: floats(&s["alpha"])?,
                beta: floats(&s["beta"])?,
                mixing: json_tensor(&s["mixing"], path)?,
            },
        ));
    }
    Ok(GroundTruth {
        w1: json_tensor(&v["w1"], path)?,
        b1: floats(&v["b1"])?,
        w2: json_tensor(&v["w2"], path)?,
        noise: v["noise"].as_f64().ok_or_else(|| bad("noise must be a number".into()))?,
        speakers,
    })
}

fn mask_tensor(m: &FrameMask) -> Tensor {
    Tensor::vector(m.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> CliResult<()> {
    let tensors = dir.join("tensors");
    fs::create_dir_all(&tensors).map_err(CliError::io(&tensors))?;
    let cfg = serde_json::to_string_pretty(&CorpusSection::from(&corpus.config)).expect("config serializes");
    write_text(&dir.join("corpus.json"), &cfg)?;
    write_text(&dir.join("truth.json"), &truth_json(&corpus.truth).to_string())?;
    let manifest = dir.join("manifest.jsonl");
    let file = fs::File::create(&manifest).map_err(CliError::io(&manifest))?;
    let mut out = std::io::BufWriter::new(file);
    for u in &corpus.utterances {
        let line = ManifestLine {
            id: u.id.clone(),
            speaker: u.speaker.to_string(),
            split: u.split.name().into(),
            frames: u.frames(),
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("manifest serializes")).map_err(CliError::io(&manifest))?;
        if let Some(x) = &u.linguistic {
            tensorfile::write(&tensor_path(dir, &u.id, "x"), x)?;
        }
        tensorfile::write(&tensor_path(dir, &u.id, "y"), &u.acoustic)?;
        tensorfile::write(&tensor_path(dir, &u.id, "mask"), &mask_tensor(&u.mask))?;
    }
    out.flush().map_err(CliError::io(&manifest))
}

/// Reads a corpus directory. With `text_free` the linguistic files are never
/// opened; otherwise a missing linguistic file loads as `None`.
pub fn load_corpus(dir: &Path, text_free: bool) -> CliResult<LoadedCorpus> {
    let cfg_path = dir.join("corpus.json");
    let cfg_text = fs::read_to_string(&cfg_path).map_err(CliError::io(&cfg_path))?;
    let section: CorpusSection = serde_json::from_str(&cfg_text).map_err(|e| CliError::format(&cfg_path, e.to_string()))?;
    let config = CorpusConfig::from(&section);

    let truth_path = dir.join("truth.json");
    let truth = if truth_path.exists() {
        let text = fs::read_to_string(&truth_path).map_err(CliError::io(&truth_path))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::format(&truth_path, e.to_string()))?;
        Some(parse_truth(&v, &truth_path)?)
    } else {
        None
    };

    let manifest = dir.join("manifest.jsonl");
    let file = fs::File::open(&manifest).map_err(CliError::io(&manifest))?;
    let mut utterances = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(CliError::io(&manifest))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |d: String| CliError::format(&manifest, format!("line {}: {d}", i + 1));
        let m: ManifestLine = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        let speaker: SpeakerId = m.speaker.parse().map_err(|e: spkadapt_core::Error| at(e.to_string()))?;
        let split: Split = m.split.parse().map_err(|e: spkadapt_core::Error| at(e.to_string()))?;
        let x_path = tensor_path(dir, &m.id, "x");
        let linguistic = if text_free || !x_path.exists() {
            None
        } else {
            Some(tensorfile::read(&x_path)?)
        };
        let acoustic = tensorfile::read(&tensor_path(dir, &m.id, "y"))?;
        let mask = tensorfile::read(&tensor_path(dir, &m.id, "mask"))?;
        let u = Utterance {
            id: m.id,
            speaker,
            linguistic,
            acoustic,
            mask: FrameMask(mask.data().iter().map(|&v| v != 0.0).collect()),
            split,
        };
        if u.frames() != m.frames {
            return Err(at(format!("{} has {} frames, manifest says {}", u.id, u.frames(), m.frames)));
        }
        u.validate().map_err(|e| at(e.to_string()))?;
        utterances.push(u);
    }
    if utterances.is_empty() {
        return Err(CliError::format(&manifest, "manifest lists no utterances"));
    }
    Ok(LoadedCorpus {
        config,
        truth,
        utterances,
    })
}
