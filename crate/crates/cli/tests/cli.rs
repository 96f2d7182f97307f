use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use spkadapt_cli::checkpoint::Checkpoint;
use spkadapt_cli::config::RunConfig;
use spkadapt_cli::metrics::read_rows;
use spkadapt_core::layers::SpeakerId;
use spkadapt_core::network::{ModelParameters, ParamGroup};
use spkadapt_core::rng::seeded;
use spkadapt_core::strategies::{adaptation_plan, build_model, lookup};
use tempfile::TempDir;

const SMALL: &str = r#"{
  "corpus": {"n_base_speakers": 3, "base_utterances": 8, "base_valid": 2, "n_target_speakers": 1,
             "target_adapt": 10, "target_valid": 2, "target_test": 3, "t_min": 12, "t_max": 20},
  "train": {"max_epochs": 6},
  "adapt": {"max_epochs": 4}
}"#;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_spkadapt")).args(args).output().unwrap();
    Out {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into(),
        stderr: String::from_utf8_lossy(&o.stderr).into(),
    }
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert_eq!(o.code, 0, "{args:?}\n{}\n{}", o.stdout, o.stderr);
    o.stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
        let f = Fixture { dir };
        ok(&["corpus", "--config", s(&f.cfg()), "--out", s(&f.corpus())]);
        f
    }
    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
    fn cfg(&self) -> PathBuf {
        self.p("cfg.json")
    }
    fn corpus(&self) -> PathBuf {
        self.p("corpus")
    }
    fn train(&self, strategy: &str, name: &str) -> PathBuf {
        let out = self.p(name);
        ok(&[
            "train",
            "--corpus",
            s(&self.corpus()),
            "--strategy",
            strategy,
            "--config",
            s(&self.cfg()),
            "--out",
            s(&out),
            "--metrics",
            s(&self.p(&format!("{name}.csv"))),
        ]);
        out
    }
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn values(m: &ModelParameters) -> BTreeMap<String, Vec<f64>> {
    let mut out = BTreeMap::new();
    m.visit(&mut |name, t| {
        out.insert(name.to_string(), t.data().to_vec());
    });
    out
}

#[test]
fn corpus_is_reproducible_and_reports_errors() {
    let f = Fixture::new();
    assert!(f.corpus().join("manifest.jsonl").is_file());
    ok(&["corpus", "--config", s(&f.cfg()), "--out", s(&f.p("again"))]);
    assert_eq!(tree(&f.corpus()), tree(&f.p("again")));

    let o = run(&["corpus", "--config", s(&f.cfg()), "--out", s(&f.p("no/such/dir"))]);
    assert_eq!(o.code, 3, "{}", o.stderr);

    fs::write(f.p("bad.json"), r#"{"corpus": {"d_x": 1}}"#).unwrap();
    let o = run(&["corpus", "--config", s(&f.p("bad.json")), "--out", s(&f.p("x"))]);
    assert_eq!(o.code, 2, "{}", o.stderr);
    assert!(o.stderr.contains("d_x"), "{}", o.stderr);

    fs::write(f.p("typo.json"), r#"{"corpus": {"n_speakers": 3}}"#).unwrap();
    assert_eq!(run(&["corpus", "--config", s(&f.p("typo.json")), "--out", s(&f.p("y"))]).code, 2);
}

#[test]
fn train_improves_and_reloads() {
    let f = Fixture::new();
    let ck = f.train("MU-A1B", "mu.ck");
    let rows = read_rows(&f.p("mu.ck.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    let best = rows.iter().map(|r| r.mse).fold(f64::INFINITY, f64::min);
    assert!(best < rows[0].mse, "{} !< {}", best, rows[0].mse);

    // the checkpoint holds the best epoch; re-scoring it after the f32 round trip
    let out = ok(&["eval", "--checkpoint", s(&ck), "--corpus", s(&f.corpus()), "--split", "valid"]);
    let all: f64 = out.lines().last().unwrap().split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((all - best).abs() < 1e-6, "{all} vs {best}");
}

#[test]
fn train_one_epoch_writes_one_row() {
    let f = Fixture::new();
    fs::write(f.p("one.json"), SMALL.replace(r#""max_epochs": 6"#, r#""max_epochs": 1"#)).unwrap();
    ok(&[
        "train",
        "--corpus",
        s(&f.corpus()),
        "--strategy",
        "A1b",
        "--config",
        s(&f.p("one.json")),
        "--out",
        s(&f.p("one.ck")),
        "--metrics",
        s(&f.p("one.csv")),
    ]);
    let text = fs::read_to_string(f.p("one.csv")).unwrap();
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.starts_with("run_id,mode,strategy,speaker,n_adapt,epoch,split,mse,seconds"));
}

#[test]
fn unknown_strategy_lists_names() {
    let f = Fixture::new();
    let o = run(&["train", "--corpus", s(&f.corpus()), "--strategy", "A9z", "--out", s(&f.p("x.ck"))]);
    assert_eq!(o.code, 2);
    for name in ["A1b", "BaB_all", "MU-A1B", "AD-A1bB"] {
        assert!(o.stderr.contains(name), "{}", o.stderr);
    }
}

#[test]
fn adapt_text_free_and_contracts() {
    let f = Fixture::new();
    let ck = f.train("A1b", "a1b.ck");
    for e in fs::read_dir(f.corpus().join("tensors")).unwrap() {
        let p = e.unwrap().path();
        if p.to_str().unwrap().ends_with(".x.adsy") {
            fs::remove_file(p).unwrap();
        }
    }
    let common = |kind: &str, out: &str| {
        run(&[
            "adapt",
            "--checkpoint",
            s(&ck),
            "--corpus",
            s(&f.corpus()),
            "--speaker",
            "spk1000",
            "--kind",
            kind,
            "--n",
            "5",
            "--out",
            s(&f.p(out)),
        ])
    };
    let o = common("unsupervised", "u.ck");
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(f.p("u.ck").is_file());
    let o = common("supervised", "s.ck");
    assert_eq!(o.code, 2, "{}", o.stderr);
    assert!(!f.p("s.ck").exists());

    // only the plan's parameters move
    let before = Checkpoint::load(&ck).unwrap();
    let after = Checkpoint::load(&f.p("u.ck")).unwrap();
    let plan = adaptation_plan(&lookup("A1b").unwrap(), &before.model, SpeakerId(1000)).unwrap();
    let (b, a) = (values(&plan.model), values(&after.model));
    assert_eq!(b.keys().collect::<Vec<_>>(), a.keys().collect::<Vec<_>>());
    let changed: Vec<&String> = a.keys().filter(|k| a[*k] != b[*k]).collect();
    assert!(!changed.is_empty());
    for k in changed {
        assert!(plan.selects(k), "{k} changed");
    }
}

#[test]
fn adapt_strip_all_has_no_speaker_bytes() {
    let f = Fixture::new();
    let ck = f.train("BaB", "bab.ck");
    ok(&[
        "adapt",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&f.corpus()),
        "--speaker",
        "spk1000",
        "--kind",
        "supervised",
        "--n",
        "5",
        "--strategy",
        "BaB_all",
        "--out",
        s(&f.p("all.ck")),
    ]);
    let before = Checkpoint::load(&ck).unwrap();
    let after = Checkpoint::load(&f.p("all.ck")).unwrap();
    assert!(after.stripped);
    assert_eq!(after.model.count(ParamGroup::Speaker), 0);
    // encoders are outside the plan
    let (b, a) = (values(&before.model), values(&after.model));
    for (k, v) in &a {
        if !k.starts_with("dec") {
            assert_eq!(&b[k], v, "{k}");
        }
    }

    // components placed elsewhere cannot be reused
    let o = run(&[
        "adapt",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&f.corpus()),
        "--speaker",
        "spk1000",
        "--kind",
        "supervised",
        "--n",
        "5",
        "--strategy",
        "A1b",
        "--out",
        s(&f.p("x.ck")),
    ]);
    assert_eq!(o.code, 2);
}

fn eval(f: &Fixture, ck: &Path, split: &str, extra: &[&str]) -> (String, Vec<(String, f64)>) {
    let (csv, corpus) = (f.p("eval.csv"), f.corpus());
    let mut args = vec!["eval", "--checkpoint", s(ck), "--corpus", s(&corpus), "--split", split, "--metrics", s(&csv)];
    args.extend_from_slice(extra);
    let out = ok(&args);
    let rows = read_rows(&csv).unwrap().into_iter().map(|r| (r.speaker, r.mse)).collect();
    (out, rows)
}

#[test]
fn eval_properties() {
    let f = Fixture::new();
    let ck = f.train("A1b", "a1b.ck");
    let cfg = RunConfig::parse(SMALL, Path::new("cfg")).unwrap();
    let speakers: Vec<SpeakerId> = (0..3).map(SpeakerId).collect();
    let fresh = build_model(&lookup("A1b").unwrap(), &cfg.network.to_network(), &speakers, &mut seeded(0)).unwrap();
    Checkpoint::new(cfg, "A1b", fresh).save(&f.p("fresh.ck")).unwrap();

    let (out1, trained) = eval(&f, &ck, "train", &[]);
    let (_, untrained) = eval(&f, &f.p("fresh.ck"), "train", &[]);
    let (all_t, all_u) = (trained.last().unwrap().1, untrained.last().unwrap().1);
    assert!(all_t < all_u, "{all_t} !< {all_u}");

    let (out2, again) = eval(&f, &ck, "train", &[]);
    assert_eq!(out1, out2);
    assert_eq!(trained, again);

    // 6 train utterances per base speaker, so the overall value is the plain mean
    assert_eq!(trained.len(), 4);
    assert_eq!(trained[3].0, "all");
    let mean = trained[..3].iter().map(|r| r.1).sum::<f64>() / 3.0;
    assert!((mean - all_t).abs() < 1e-12);

    let (_, par) = eval(&f, &ck, "train", &["--jobs", "3"]);
    for (a, b) in trained.iter().zip(&par) {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() < 1e-12);
    }

    // targets are unknown to a base-trained model unless mapped explicitly
    assert_eq!(run(&["eval", "--checkpoint", s(&ck), "--corpus", s(&f.corpus()), "--speaker", "spk1000"]).code, 2);
    let (_, mapped) = eval(&f, &ck, "test", &["--speaker", "spk1000", "--as-speaker", "spk000"]);
    assert_eq!(mapped.len(), 2);
    assert_eq!(mapped[0].0, "spk1000");
}

#[test]
fn gradcheck_lists_checks() {
    let out = ok(&["gradcheck", "--scope", "losses", "--seeds", "3"]);
    assert!(out.contains("PASS losses  loss.mse"), "{out}");
    assert!(out.contains("loss.kld"));
    assert!(out.lines().last().unwrap().starts_with("total"));
    assert_eq!(run(&["gradcheck", "--scope", "nope"]).code, 2);
}

#[test]
fn params_paper_scale() {
    let out = ok(&["params", "BaB", "--paper-scale"]);
    assert!(out.lines().nth(1).unwrap().split_whitespace().collect::<Vec<_>>() == ["BaB", "512x8", "4096"], "{out}");
    let out = ok(&["params", "A3A", "--paper-scale"]);
    assert_eq!(out.lines().nth(1).unwrap().split_whitespace().nth(2), Some("512"));
    let listing = ok(&["params"]);
    assert_eq!(listing.lines().count(), 20);
}
