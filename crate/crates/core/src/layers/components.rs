use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::Session;
use crate::error::{dim_err, Error, Result};
use crate::numcore::{Tensor, Var};
use crate::rng::{normal_tensor, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpeakerId(pub u32);

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "spk{:03}", self.0)
    }
}

impl FromStr for SpeakerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix("spk")
            .and_then(|d| d.parse().ok())
            .map(SpeakerId)
            .ok_or_else(|| Error::Parameter(format!("bad speaker id {s:?}")))
    }
}

/// Decoder layers that may host speaker components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HostLayer {
    /// First feedforward layer of the decoder.
    A1,
    /// Last hidden feedforward layer of the decoder.
    A3,
    /// Gated convolution layer `1..=8` of the decoder.
    B(u8),
}

impl HostLayer {
    pub fn is_gated(self) -> bool {
        matches!(self, HostLayer::B(_))
    }

    pub fn all_conv() -> impl Iterator<Item = HostLayer> {
        (1..=8).map(HostLayer::B)
    }
}

impl fmt::Display for HostLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HostLayer::A1 => f.write_str("A1"),
            HostLayer::A3 => f.write_str("A3"),
            HostLayer::B(i) => write!(f, "B{i}"),
        }
    }
}

impl FromStr for HostLayer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A1" => Ok(HostLayer::A1),
            "A3" => Ok(HostLayer::A3),
            _ => s
                .strip_prefix('B')
                .and_then(|d| d.parse::<u8>().ok())
                .filter(|i| (1..=8).contains(i))
                .map(HostLayer::B)
                .ok_or_else(|| Error::Spec(format!("unknown host layer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasForm {
    /// Free bias vector of the host width (one per filter/gate path).
    Full,
    /// Bias code projected by shared subspace matrices.
    Code(usize),
    /// Bias code plus a free bias over the first `free` units.
    CodePlusFree { code: usize, free: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleForm {
    Full,
    Code(usize),
}

/// How a new speaker's components are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeakerInit {
    /// Start from neutral (scale 1, bias 0); used when training the initial
    /// model, where subspace matrices are built to make this exact.
    Training,
    /// Start from bias 0 and the code whose projected scale is closest to 1
    /// under the already-trained subspace.
    Adaptation,
}

/// Speaker components of one host layer: shared subspace matrices plus one
/// small set of vectors per speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct HostComponents {
    pub width: usize,
    pub gated: bool,
    pub bias: Option<BiasForm>,
    pub scale: Option<ScaleForm>,
    pub subspace: BTreeMap<String, Tensor>,
    pub speakers: BTreeMap<SpeakerId, BTreeMap<String, Tensor>>,
}

/// Resolved speaker vectors for one host layer. Index 0 is the feedforward
/// or filter path, index 1 the gate path (gated hosts only).
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedVectors {
    pub scale: Vec<Tensor>,
    pub bias: Vec<Tensor>,
}

/// Graph handles for the speaker vectors of one host layer; `None` is neutral.
#[derive(Debug, Clone, Copy, Default)]
pub struct Modulation {
    pub scale: [Option<Var>; 2],
    pub bias: [Option<Var>; 2],
}

impl Modulation {
    pub fn gate(self) -> super::GateModulation {
        super::GateModulation {
            scale_f: self.scale[0],
            scale_g: self.scale[1],
            bias_f: self.bias[0],
            bias_g: self.bias[1],
        }
    }
}

fn paths(gated: bool) -> &'static [&'static str] {
    if gated {
        &["f", "g"]
    } else {
        &[""]
    }
}

impl HostComponents {
    pub fn new(
        rng: &mut SeededRng,
        width: usize,
        gated: bool,
        bias: Option<BiasForm>,
        scale: Option<ScaleForm>,
    ) -> Self {
        let mut subspace = BTreeMap::new();
        for p in paths(gated) {
            if let Some(BiasForm::Code(q) | BiasForm::CodePlusFree { code: q, .. }) = bias {
                let w = normal_tensor(rng, &[width, q], 1.0 / libm::sqrt(q as f64));
                subspace.insert(format!("wb{p}"), w);
            }
            if let Some(ScaleForm::Code(pdim)) = scale {
                let mut w = normal_tensor(rng, &[width, pdim], 0.1 / libm::sqrt(pdim as f64));
                // first column all ones so that the code e_1 resolves to unit scale
                for r in 0..width {
                    w.data_mut()[r * pdim] = 1.0;
                }
                subspace.insert(format!("wa{p}"), w);
            }
        }
        HostComponents {
            width,
            gated,
            bias,
            scale,
            subspace,
            speakers: BTreeMap::new(),
        }
    }

    /// Number of trainable scalars one speaker owns at this host.
    pub fn footprint(&self) -> usize {
        let n_paths = if self.gated { 2 } else { 1 };
        let bias = match self.bias {
            None => 0,
            Some(BiasForm::Full) => n_paths * self.width,
            Some(BiasForm::Code(q)) => q,
            Some(BiasForm::CodePlusFree { code, free }) => code + free,
        };
        let scale = match self.scale {
            None => 0,
            Some(ScaleForm::Full) => n_paths * self.width,
            Some(ScaleForm::Code(p)) => p,
        };
        bias + scale
    }

    pub fn add_speaker(&mut self, speaker: SpeakerId, init: SpeakerInit) -> Result<()> {
        if self.speakers.contains_key(&speaker) {
            return Err(Error::Identity(format!("{speaker} already has components")));
        }
        let mut v = BTreeMap::new();
        match self.bias {
            None => {}
            Some(BiasForm::Full) => {
                for p in paths(self.gated) {
                    v.insert(format!("b{p}"), Tensor::zeros(&[self.width]));
                }
            }
            Some(BiasForm::Code(q)) => {
                v.insert("sb".to_string(), Tensor::zeros(&[q]));
            }
            Some(BiasForm::CodePlusFree { code, free }) => {
                if free > self.width {
                    return Err(Error::Spec(format!(
                        "free bias of {free} units exceeds host width {}",
                        self.width
                    )));
                }
                v.insert("sb".to_string(), Tensor::zeros(&[code]));
                v.insert("bfree".to_string(), Tensor::zeros(&[free]));
            }
        }
        match self.scale {
            None => {}
            Some(ScaleForm::Full) => {
                for p in paths(self.gated) {
                    v.insert(format!("a{p}"), Tensor::ones(&[self.width]));
                }
            }
            Some(ScaleForm::Code(p)) => {
                let code = match init {
                    SpeakerInit::Training => {
                        let mut e = Tensor::zeros(&[p]);
                        e.data_mut()[0] = 1.0;
                        e
                    }
                    SpeakerInit::Adaptation => self.unit_scale_code(p)?,
                };
                v.insert("sa".to_string(), code);
            }
        }
        self.speakers.insert(speaker, v);
        Ok(())
    }

    /// Least-squares code `s` minimising `sum_paths |W_a s - 1|^2`.
    fn unit_scale_code(&self, p: usize) -> Result<Tensor> {
        let mut ata = vec![0.0; p * p];
        let mut atb = vec![0.0; p];
        for path in paths(self.gated) {
            let w = self.subspace_matrix(&format!("wa{path}"))?;
            for r in 0..self.width {
                let row = w.row(r);
                for i in 0..p {
                    atb[i] += row[i];
                    for j in 0..p {
                        ata[i * p + j] += row[i] * row[j];
                    }
                }
            }
        }
        let sol = solve_spd(ata, atb, p)?;
        Ok(Tensor::vector(sol))
    }

    fn subspace_matrix(&self, key: &str) -> Result<&Tensor> {
        self.subspace
            .get(key)
            .ok_or_else(|| Error::Lookup(format!("missing subspace matrix {key}")))
    }

    fn speaker_vectors(&self, host: HostLayer, speaker: SpeakerId) -> Result<&BTreeMap<String, Tensor>> {
        self.speakers
            .get(&speaker)
            .ok_or_else(|| Error::Lookup(format!("{speaker} has no components at {host}")))
    }
}

/// Cholesky solve of a small symmetric positive (semi)definite system, with a
/// tiny ridge so rank-deficient subspaces still yield the minimum-norm-ish fit.
fn solve_spd(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let ridge = 1e-10 * (trace / n as f64).max(1e-300);
    for i in 0..n {
        a[i * n + i] += ridge;
    }
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Numeric("subspace normal equations are singular".into()));
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * n + k] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[k * n + i] * b[k];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(b)
}

/// All per-speaker parameters of a decoder, keyed by host layer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeakerComponentSet {
    hosts: BTreeMap<HostLayer, HostComponents>,
}

impl SpeakerComponentSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.is_empty()
    }

    pub fn add_host(&mut self, host: HostLayer, components: HostComponents) -> Result<()> {
        if host.is_gated() != components.gated {
            return Err(Error::Spec(format!("{host} gating does not match its components")));
        }
        if self.hosts.insert(host, components).is_some() {
            return Err(Error::Spec(format!("{host} placed twice")));
        }
        Ok(())
    }

    pub fn host(&self, host: HostLayer) -> Option<&HostComponents> {
        self.hosts.get(&host)
    }

    pub fn hosts(&self) -> impl Iterator<Item = (HostLayer, &HostComponents)> {
        self.hosts.iter().map(|(h, c)| (*h, c))
    }

    pub fn add_speaker(&mut self, speaker: SpeakerId, init: SpeakerInit) -> Result<()> {
        for c in self.hosts.values_mut() {
            c.add_speaker(speaker, init)?;
        }
        Ok(())
    }

    /// Speakers registered at every host. Empty for a set without hosts.
    pub fn speakers(&self) -> Vec<SpeakerId> {
        self.hosts
            .values()
            .next()
            .map(|c| c.speakers.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn contains(&self, speaker: SpeakerId) -> bool {
        self.hosts.values().all(|c| c.speakers.contains_key(&speaker))
    }

    pub fn remove_speaker(&mut self, speaker: SpeakerId) {
        for c in self.hosts.values_mut() {
            c.speakers.remove(&speaker);
        }
    }

    pub fn footprint(&self) -> usize {
        self.hosts.values().map(HostComponents::footprint).sum()
    }

    /// Speaker-specific scalars actually stored for `speaker`.
    pub fn stored_scalars(&self, speaker: SpeakerId) -> usize {
        self.hosts
            .values()
            .filter_map(|c| c.speakers.get(&speaker))
            .flat_map(|m| m.values())
            .map(Tensor::len)
            .sum()
    }

    pub fn speaker_param_name(host: HostLayer, speaker: SpeakerId, key: &str) -> String {
        format!("spk.{host}.{speaker}.{key}")
    }

    pub fn shared_param_name(host: HostLayer, key: &str) -> String {
        format!("spk.{host}.{key}")
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor)) {
        for (&host, c) in &self.hosts {
            for (k, t) in &c.subspace {
                f(&Self::shared_param_name(host, k), t);
            }
            for (&spk, vecs) in &c.speakers {
                for (k, t) in vecs {
                    f(&Self::speaker_param_name(host, spk, k), t);
                }
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.visit_mut_speakers(&|_| true, f);
    }

    /// Like [`Self::visit_mut`] but skips the vectors of rejected speakers.
    pub fn visit_mut_speakers(&mut self, keep: &dyn Fn(SpeakerId) -> bool, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (&host, c) in &mut self.hosts {
            for (k, t) in &mut c.subspace {
                f(&Self::shared_param_name(host, k), t);
            }
            for (&spk, vecs) in c.speakers.iter_mut().filter(|(s, _)| keep(**s)) {
                for (k, t) in vecs {
                    f(&Self::speaker_param_name(host, spk, k), t);
                }
            }
        }
    }

    /// Value-level speaker vectors of `host` for `speaker`.
    ///
    /// Hosts without components resolve to all-ones scales and all-zeros
    /// biases of the given width.
    pub fn resolve_speaker_vectors(
        &self,
        host: HostLayer,
        speaker: SpeakerId,
        width: usize,
    ) -> Result<ResolvedVectors> {
        let mut s = Session::inference();
        let m = self.bind(&mut s, host, speaker)?;
        let n = if host.is_gated() { 2 } else { 1 };
        let pick = |v: Option<Var>, neutral: f64| match v {
            Some(v) => s.graph.value(v).clone(),
            None => Tensor::filled(&[width], neutral),
        };
        Ok(ResolvedVectors {
            scale: (0..n).map(|i| pick(m.scale[i], 1.0)).collect(),
            bias: (0..n).map(|i| pick(m.bias[i], 0.0)).collect(),
        })
    }

    /// Records the speaker vectors of `host` in the session's graph.
    pub fn bind(&self, s: &mut Session, host: HostLayer, speaker: SpeakerId) -> Result<Modulation> {
        let Some(c) = self.hosts.get(&host) else {
            return Ok(Modulation::default());
        };
        let vecs = c.speaker_vectors(host, speaker)?;
        let get = |key: &str| {
            vecs.get(key)
                .ok_or_else(|| Error::Lookup(format!("{speaker} is missing {key} at {host}")))
        };
        let mut out = Modulation::default();
        for (i, p) in paths(c.gated).iter().enumerate() {
            out.bias[i] = match c.bias {
                None => None,
                Some(BiasForm::Full) => {
                    let key = format!("b{p}");
                    let name = Self::speaker_param_name(host, speaker, &key);
                    Some(s.param(&name, get(&key)?))
                }
                Some(BiasForm::Code(_)) => Some(project(s, c, host, speaker, &format!("wb{p}"), "sb", get("sb")?)?),
                Some(BiasForm::CodePlusFree { free, .. }) => {
                    let coded = project(s, c, host, speaker, &format!("wb{p}"), "sb", get("sb")?)?;
                    let mut place = Tensor::zeros(&[c.width, free]);
                    for u in 0..free {
                        place.data_mut()[u * free + u] = 1.0;
                    }
                    let place = s.input(place);
                    let name = Self::speaker_param_name(host, speaker, "bfree");
                    let fv = s.param(&name, get("bfree")?);
                    let fv = s.graph.reshape(fv, &[free, 1])?;
                    let padded = s.graph.matmul(place, fv)?;
                    let padded = s.graph.reshape(padded, &[c.width])?;
                    Some(s.graph.add(coded, padded)?)
                }
            };
            out.scale[i] = match c.scale {
                None => None,
                Some(ScaleForm::Full) => {
                    let key = format!("a{p}");
                    let name = Self::speaker_param_name(host, speaker, &key);
                    Some(s.param(&name, get(&key)?))
                }
                Some(ScaleForm::Code(_)) => Some(project(s, c, host, speaker, &format!("wa{p}"), "sa", get("sa")?)?),
            };
        }
        Ok(out)
    }

    /// Removes every speaker component, leaving a speaker-free decoder.
    pub fn strip(&self) -> SpeakerComponentSet {
        SpeakerComponentSet::new()
    }
}

/// `W code` as a width-long vector.
fn project(
    s: &mut Session,
    c: &HostComponents,
    host: HostLayer,
    speaker: SpeakerId,
    matrix: &str,
    code_key: &str,
    code: &Tensor,
) -> Result<Var> {
    let w = c.subspace_matrix(matrix)?;
    let (rows, q) = w.dims2()?;
    if code.len() != q {
        return Err(dim_err("speaker code", w.shape(), code.shape()));
    }
    let wv = s.param(&SpeakerComponentSet::shared_param_name(host, matrix), w);
    let sv = s.param(&SpeakerComponentSet::speaker_param_name(host, speaker, code_key), code);
    let col = s.graph.reshape(sv, &[q, 1])?;
    let out = s.graph.matmul(wv, col)?;
    s.graph.reshape(out, &[rows])
}

/// Empty set; equivalent to [`SpeakerComponentSet::strip`].
pub fn strip_speaker_components(set: &SpeakerComponentSet) -> SpeakerComponentSet {
    set.strip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn ff_code_host(width: usize, q: usize, seed: u64) -> HostComponents {
        HostComponents::new(&mut seeded(seed), width, false, Some(BiasForm::Code(q)), None)
    }

    #[test]
    fn host_and_speaker_ids_round_trip() {
        for h in [HostLayer::A1, HostLayer::A3, HostLayer::B(1), HostLayer::B(8)] {
            assert_eq!(h.to_string().parse::<HostLayer>().unwrap(), h);
        }
        assert!("B9".parse::<HostLayer>().is_err());
        assert!("A2".parse::<HostLayer>().is_err());
        assert_eq!("spk042".parse::<SpeakerId>().unwrap(), SpeakerId(42));
    }

    #[test]
    fn empty_set_resolves_neutral() {
        let set = SpeakerComponentSet::new();
        let r = set.resolve_speaker_vectors(HostLayer::B(3), SpeakerId(7), 5).unwrap();
        assert_eq!(r.scale, vec![Tensor::ones(&[5]); 2]);
        assert_eq!(r.bias, vec![Tensor::zeros(&[5]); 2]);
    }

    #[test]
    fn identity_subspace_returns_code() {
        let mut host = ff_code_host(128, 128, 1);
        host.subspace.insert("wb".into(), Tensor::eye(128));
        host.add_speaker(SpeakerId(0), SpeakerInit::Training).unwrap();
        let mut e3 = Tensor::zeros(&[128]);
        e3.data_mut()[3] = 1.0;
        host.speakers.get_mut(&SpeakerId(0)).unwrap().insert("sb".into(), e3.clone());
        let mut set = SpeakerComponentSet::new();
        set.add_host(HostLayer::A1, host).unwrap();
        let r = set.resolve_speaker_vectors(HostLayer::A1, SpeakerId(0), 128).unwrap();
        assert_eq!(r.bias[0], e3);
        assert_eq!(r.scale[0], Tensor::ones(&[128]));
    }

    #[test]
    fn code_projection_matches_hand_product() {
        let mut host = ff_code_host(4, 2, 9);
        let w = host.subspace["wb"].clone();
        host.add_speaker(SpeakerId(1), SpeakerInit::Training).unwrap();
        host.speakers.get_mut(&SpeakerId(1)).unwrap().insert("sb".into(), Tensor::vector(vec![1.0, -1.0]));
        let mut set = SpeakerComponentSet::new();
        set.add_host(HostLayer::A3, host).unwrap();
        let r = set.resolve_speaker_vectors(HostLayer::A3, SpeakerId(1), 4).unwrap();
        for i in 0..4 {
            let want = w.at2(i, 0) - w.at2(i, 1);
            assert!((r.bias[0].data()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_speaker_and_bad_code_dimension() {
        let mut host = ff_code_host(4, 2, 2);
        host.add_speaker(SpeakerId(1), SpeakerInit::Training).unwrap();
        let mut set = SpeakerComponentSet::new();
        set.add_host(HostLayer::A1, host).unwrap();
        assert!(matches!(
            set.resolve_speaker_vectors(HostLayer::A1, SpeakerId(2), 4),
            Err(Error::Lookup(_))
        ));
        let mut bad = set.clone();
        bad.hosts.get_mut(&HostLayer::A1).unwrap().speakers.get_mut(&SpeakerId(1)).unwrap()
            .insert("sb".into(), Tensor::zeros(&[3]));
        assert!(matches!(
            bad.resolve_speaker_vectors(HostLayer::A1, SpeakerId(1), 4),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn training_init_is_neutral_for_every_form() {
        let mut rng = seeded(5);
        let mut set = SpeakerComponentSet::new();
        set.add_host(HostLayer::A1, HostComponents::new(&mut rng, 6, false, Some(BiasForm::CodePlusFree { code: 3, free: 2 }), Some(ScaleForm::Full))).unwrap();
        set.add_host(HostLayer::A3, HostComponents::new(&mut rng, 6, false, Some(BiasForm::Code(3)), Some(ScaleForm::Code(3)))).unwrap();
        set.add_host(HostLayer::B(2), HostComponents::new(&mut rng, 6, true, Some(BiasForm::Full), Some(ScaleForm::Code(2)))).unwrap();
        set.add_speaker(SpeakerId(0), SpeakerInit::Training).unwrap();
        for (host, c) in set.hosts() {
            let r = set.resolve_speaker_vectors(host, SpeakerId(0), c.width).unwrap();
            for t in &r.scale {
                assert_eq!(t, &Tensor::ones(&[6]));
            }
            for t in &r.bias {
                assert_eq!(t, &Tensor::zeros(&[6]));
            }
        }
        assert!(matches!(set.add_speaker(SpeakerId(0), SpeakerInit::Training), Err(Error::Identity(_))));
    }

    #[test]
    fn adaptation_scale_code_fits_unit_scale() {
        let mut rng = seeded(8);
        let mut host = HostComponents::new(&mut rng, 6, true, None, Some(ScaleForm::Code(3)));
        // perturb the subspace so the training shortcut no longer applies
        for t in host.subspace.values_mut() {
            for v in t.data_mut() {
                *v *= 1.3;
            }
        }
        host.add_speaker(SpeakerId(4), SpeakerInit::Adaptation).unwrap();
        let mut set = SpeakerComponentSet::new();
        set.add_host(HostLayer::B(5), host).unwrap();
        let r = set.resolve_speaker_vectors(HostLayer::B(5), SpeakerId(4), 6).unwrap();
        for t in &r.scale {
            for v in t.data() {
                assert!((v - 1.0).abs() < 1e-9, "{v}");
            }
        }
    }

    #[test]
    fn footprints_count_codes_once() {
        let mut rng = seeded(0);
        let full_gated = HostComponents::new(&mut rng, 256, true, Some(BiasForm::Full), Some(ScaleForm::Full));
        assert_eq!(full_gated.footprint(), 1024);
        let code_gated = HostComponents::new(&mut rng, 256, true, Some(BiasForm::Code(64)), Some(ScaleForm::Code(64)));
        assert_eq!(code_gated.footprint(), 128);
    }

    #[test]
    fn strip_yields_empty_set() {
        let mut set = SpeakerComponentSet::new();
        assert!(strip_speaker_components(&set).is_empty());
        set.add_host(HostLayer::A1, ff_code_host(4, 2, 3)).unwrap();
        assert!(strip_speaker_components(&set).is_empty());
    }
}
