//! Fixture workspaces and helpers for driving the `fairlens` binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairlens_core::corpus::{AgeBand, DemographicGroup, Domain, Gender, Race};
use fairlens_core::fixtures::write_fixture_seeds;
use serde_json::{json, Value};
use tempfile::TempDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_fairlens");

pub fn reference_lexicon() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("reference_lexicon.csv")
}

/// Six male groups: every race at two age bands.
pub fn male_groups() -> Vec<DemographicGroup> {
    Race::ALL
        .iter()
        .flat_map(|&r| [AgeBand::YoungAdult, AgeBand::MiddleAged].map(|a| DemographicGroup::new(r, Gender::Male, a)))
        .collect()
}

pub const TEN_WORDS: [&str; 10] =
    ["nurse", "lawyer", "teacher", "pilot", "chef", "judge", "farmer", "baker", "dentist", "architect"];

pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().expect("temp dir") }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Portraits plus `seeds/seeds.csv`.
    pub fn seeds(&self, groups: &[DemographicGroup], per_group: usize) -> PathBuf {
        write_fixture_seeds(&self.path().join("seeds"), groups, per_group).expect("fixture seeds")
    }

    /// Lexicon with every word maximally neutral.
    pub fn lexicon(&self, words: &[(&str, Domain)]) -> PathBuf {
        let mut text = String::from("word,domain,article_override,score1,score2\n");
        for (w, d) in words {
            text.push_str(&format!("{w},{d},,1,1\n"));
        }
        let path = self.path().join("lexicon.csv");
        std::fs::write(&path, text).expect("write lexicon");
        path
    }

    pub fn json(&self, name: &str, value: &Value) -> PathBuf {
        let path = self.path().join(name);
        std::fs::write(&path, serde_json::to_vec_pretty(value).expect("json")).expect("write json");
        path
    }

    pub fn synthetic_backend(&self, rules: Value) -> PathBuf {
        self.json(
            "backend.json",
            &json!({ "kind": "synthetic_bias", "model_id": "synthetic", "profile": { "rng_seed": 7, "rules": rules } }),
        )
    }

    /// Config file `name` with the fixture defaults and `extra` merged in.
    pub fn config(&self, name: &str, extra: Value) -> PathBuf {
        let mut base = json!({
            "seed_manifest": "seeds/seeds.csv",
            "lexicon": "lexicon.csv",
            "backend": "backend.json",
            "output_dir": "out",
            "allow_partial_groups": true,
            "concurrency": 2,
        });
        if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
            b.extend(e);
        }
        self.json(name, &base)
    }
}

pub fn fairlens(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn fairlens")
}

/// Runs `sub --config config extra...`, asserting success; returns the stdout summary.
pub fn run_ok(sub: &str, config: &Path, extra: &[&str]) -> Value {
    let cfg = config.to_str().expect("utf-8 path");
    let mut args = vec![sub, "--config", cfg];
    args.extend_from_slice(extra);
    let out = fairlens(&args);
    assert!(
        out.status.success(),
        "fairlens {sub} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary json")
}

pub fn exit_code(sub: &str, config: &Path, extra: &[&str]) -> i32 {
    let cfg = config.to_str().expect("utf-8 path");
    let mut args = vec![sub, "--config", cfg];
    args.extend_from_slice(extra);
    fairlens(&args).status.code().expect("exit code")
}

/// Prompts, generation, assessment and scoring; returns the run directory.
pub fn pipeline(config: &Path, extra: &[&str]) -> PathBuf {
    let mut run_id = String::new();
    for sub in ["build-prompts", "generate", "assess", "score"] {
        run_id = run_ok(sub, config, extra)["run_id"].as_str().expect("run id").to_string();
    }
    let cfg: Value = serde_json::from_slice(&std::fs::read(config).expect("config")).expect("config json");
    let out = config.parent().expect("parent").join(cfg["output_dir"].as_str().expect("output_dir"));
    out.join("runs").join(run_id)
}

pub fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

pub fn domain_words() -> Vec<(&'static str, Domain)> {
    vec![
        ("cooking", Domain::Activity),
        ("knitting", Domain::Activity),
        ("gun", Domain::Object),
        ("umbrella", Domain::Object),
        ("brave", Domain::Personality),
        ("rude", Domain::Personality),
        ("nurse", Domain::Profession),
        ("lawyer", Domain::Profession),
    ]
}
