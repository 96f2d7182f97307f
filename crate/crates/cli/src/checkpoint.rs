//! Model checkpoints.
//!
//! Layout: `b"ADCK"`, u32 format version, u64 header length, the JSON header,
//! then the little-endian f32 payload. The header echoes the run config and
//! lists every parameter with its shape and byte offset into the payload.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spkadapt_core::layers::SpeakerId;
use spkadapt_core::network::ModelParameters;
use spkadapt_core::rng::seeded;
use spkadapt_core::strategies::{build_model, registry_with, StrategySpec};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"ADCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    strategy: String,
    speakers: Vec<String>,
    /// Speaker components removed (strip-and-fine-tune models).
    stripped: bool,
    index: Vec<IndexEntry>,
}

/// A model plus the metadata needed to rebuild it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub strategy: String,
    /// Speakers the model was built for; empty once stripped.
    pub speakers: Vec<SpeakerId>,
    pub stripped: bool,
    pub model: ModelParameters,
}

pub fn resolve_strategy(config: &RunConfig, name: &str) -> CliResult<StrategySpec> {
    let reg = registry_with((&config.registry).into());
    reg.get(name).cloned().ok_or_else(|| {
        let names: Vec<&str> = reg.keys().map(String::as_str).collect();
        CliError::Usage(format!("unknown strategy {name:?}; valid names: {}", names.join(", ")))
    })
}

impl Checkpoint {
    pub fn new(config: RunConfig, strategy: &str, model: ModelParameters) -> Checkpoint {
        let speakers = model.spk.speakers();
        Checkpoint {
            config,
            strategy: strategy.into(),
            stripped: model.spk.is_empty(),
            speakers,
            model,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut index = Vec::new();
        let mut payload = Vec::new();
        self.model.visit(&mut |name, t| {
            index.push(IndexEntry {
                name: name.into(),
                shape: t.shape().to_vec(),
                offset: payload.len(),
            });
            for &v in t.data() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        });
        let header = Header {
            config: self.config.clone(),
            strategy: self.strategy.clone(),
            speakers: self.speakers.iter().map(ToString::to_string).collect(),
            stripped: self.stripped,
            index,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> CliResult<Checkpoint> {
        let bad = |d: String| CliError::format(origin, d);
        if bytes.get(..4) != Some(MAGIC.as_slice()) {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes.get(4..8).ok_or_else(|| bad("truncated".into()))?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes.get(8..16).ok_or_else(|| bad("truncated".into()))?.try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(format!("bad header: {e}")))?;
        let payload = &bytes[16 + hlen..];

        let spec = resolve_strategy(&header.config, &header.strategy)?;
        let speakers = header
            .speakers
            .iter()
            .map(|s| s.parse::<SpeakerId>())
            .collect::<spkadapt_core::Result<Vec<_>>>()
            .map_err(|e| bad(e.to_string()))?;
        let mut model = rebuild(&spec, &header.config, &speakers, header.stripped).map_err(|e| bad(e.to_string()))?;

        let expected: BTreeSet<String> = model.names().into_iter().collect();
        let mut seen = BTreeSet::new();
        for e in &header.index {
            if !seen.insert(e.name.clone()) {
                return Err(bad(format!("duplicate parameter {}", e.name)));
            }
        }
        if seen != expected {
            let missing: Vec<_> = expected.difference(&seen).collect();
            let extra: Vec<_> = seen.difference(&expected).collect();
            return Err(bad(format!("parameter index mismatch: missing {missing:?}, unexpected {extra:?}")));
        }
        let mut total = 0;
        for e in &header.index {
            total += 4 * e.shape.iter().product::<usize>();
        }
        if total != payload.len() {
            return Err(bad(format!("payload holds {} bytes, index needs {total}", payload.len())));
        }
        let by_name: std::collections::BTreeMap<&str, &IndexEntry> =
            header.index.iter().map(|e| (e.name.as_str(), e)).collect();
        let mut failure = None;
        model.visit_mut(&mut |name, t| {
            let e = by_name[name];
            if e.shape != t.shape() {
                failure.get_or_insert(format!("{name}: shape {:?}, model needs {:?}", e.shape, t.shape()));
                return;
            }
            let Some(raw) = payload.get(e.offset..e.offset + 4 * t.len()) else {
                failure.get_or_insert(format!("{name}: offset {} out of range", e.offset));
                return;
            };
            for (v, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *v = f64::from(f32::from_le_bytes(c.try_into().unwrap()));
            }
        });
        if let Some(f) = failure {
            return Err(bad(f));
        }
        Ok(Checkpoint {
            config: header.config,
            strategy: header.strategy,
            speakers,
            stripped: header.stripped,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.encode()).map_err(CliError::io(path))
    }

    pub fn load(path: &Path) -> CliResult<Checkpoint> {
        let bytes = fs::read(path).map_err(CliError::io(path))?;
        Self::decode(&bytes, path)
    }
}

/// Same parameter layout as the saved model; values are overwritten after.
fn rebuild(
    spec: &StrategySpec,
    config: &RunConfig,
    speakers: &[SpeakerId],
    stripped: bool,
) -> spkadapt_core::Result<ModelParameters> {
    let net = config.network.to_network();
    let mut rng = seeded(0);
    if stripped {
        Ok(build_model(spec, &net, &[SpeakerId(0)], &mut rng)?.stripped())
    } else {
        build_model(spec, &net, speakers, &mut rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use spkadapt_core::network::ParamGroup;
    use spkadapt_core::strategies::{adaptation_plan, lookup};

    fn model(strategy: &str) -> (RunConfig, ModelParameters) {
        let cfg = RunConfig::default();
        let spec = lookup(strategy).unwrap();
        let m = build_model(&spec, &cfg.network.to_network(), &[SpeakerId(0), SpeakerId(2)], &mut seeded(4)).unwrap();
        (cfg, m)
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        for name in ["A1b", "BaB", "AD-A1bB", "Baa"] {
            let (cfg, m) = model(name);
            let a = Checkpoint::new(cfg, name, m).encode();
            let back = Checkpoint::decode(&a, Path::new("c")).unwrap();
            assert_eq!(back.encode(), a, "{name}");
        }
    }

    #[test]
    fn reload_is_within_f32_rounding() {
        let (cfg, m) = model("A3a");
        let back = Checkpoint::decode(&Checkpoint::new(cfg, "A3a", m.clone()).encode(), Path::new("c")).unwrap();
        m.visit(&mut |name, t| {
            let u = back.model.get(name).unwrap();
            for (a, b) in t.data().iter().zip(u.data()) {
                assert!((a - b).abs() <= a.abs() * 1e-7 + 1e-30, "{name}");
            }
        });
    }

    #[test]
    fn adapted_and_stripped_models_round_trip() {
        let (cfg, m) = model("A1b");
        let plan = adaptation_plan(&lookup("A1b").unwrap(), &m, SpeakerId(1000)).unwrap();
        let bytes = Checkpoint::new(cfg.clone(), "A1b", plan.model).encode();
        let back = Checkpoint::decode(&bytes, Path::new("c")).unwrap();
        assert_eq!(back.speakers, vec![SpeakerId(0), SpeakerId(2), SpeakerId(1000)]);

        let (cfg, m) = model("BaB_all");
        let plan = adaptation_plan(&lookup("BaB_all").unwrap(), &m, SpeakerId(1000)).unwrap();
        let bytes = Checkpoint::new(cfg, "BaB_all", plan.model).encode();
        let back = Checkpoint::decode(&bytes, Path::new("c")).unwrap();
        assert!(back.stripped);
        assert_eq!(back.model.count(ParamGroup::Speaker), 0);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn damage_is_reported() {
        let (cfg, m) = model("A1b");
        let mut bytes = Checkpoint::new(cfg, "A1b", m).encode();
        bytes.truncate(bytes.len() - 4);
        assert_eq!(Checkpoint::decode(&bytes, Path::new("c")).unwrap_err().exit_code(), 3);
        assert!(Checkpoint::decode(b"nope", Path::new("c")).is_err());
    }
}
