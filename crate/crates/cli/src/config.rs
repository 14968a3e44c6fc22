//! Run configuration, its validation and its hashes.
//!
//! Relative paths are resolved against the directory of the config file.
//! Two hashes identify a configuration: the run id covers every field that
//! influences generated images or their assessment, and the config hash
//! additionally covers scoring and reporting fields. Neither covers
//! `output_dir` or `concurrency`, and both are independent of key order.

use std::path::{Path, PathBuf};

use fairlens_core::backend::{BackendConfig, DEFAULT_MITIGATION_SUFFIX};
use fairlens_core::scoring::{Thresholds, Variant};
use fairlens_core::vision::{ExposureBounds, FaceRegion, HttpAnalyzerConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed_manifest: PathBuf,
    /// CSV `path,race,gender,age_band` of candidate portraits for `sample-seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_index: Option<PathBuf>,
    pub lexicon: PathBuf,
    pub backend: PathBuf,
    /// Analyzer config file; the sidecar analyzer when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyzer: Option<PathBuf>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub exposure: ExposureBounds,
    #[serde(default)]
    pub face_region: FaceRegion,
    #[serde(default = "default_per_group")]
    pub per_group: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default = "default_suffix")]
    pub mitigation_suffix: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub allow_partial_groups: bool,
    /// Generations per pair while the output shows faces of mixed gender.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_failure_ceiling")]
    pub failure_ceiling: f64,
    /// Words per direction in the top-word tables.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_per_group() -> usize {
    3
}

fn default_concurrency() -> usize {
    4
}

fn default_suffix() -> String {
    DEFAULT_MITIGATION_SUFFIX.into()
}

fn default_max_attempts() -> u32 {
    3
}

fn default_failure_ceiling() -> f64 {
    0.05
}

fn default_top_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyzerConfig {
    Sidecar,
    Http(HttpAnalyzerConfig),
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub thresholds_age: Option<f64>,
    pub thresholds_race: Option<f64>,
    pub variant: Option<Variant>,
    pub rng_seed: Option<u64>,
    pub concurrency: Option<usize>,
}

/// A validated configuration with resolved paths.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// The configuration as written, with overrides applied and paths unresolved.
    pub written: RunConfig,
    pub backend: BackendConfig,
    pub analyzer: AnalyzerConfig,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{what} {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} {} does not exist", path.display())))
    }
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut written: RunConfig = read_json(path, "config")?;
        if let Some(v) = overrides.variant {
            written.variant = v;
        }
        if let Some(s) = overrides.rng_seed {
            written.rng_seed = s;
        }
        if let Some(c) = overrides.concurrency {
            written.concurrency = c;
        }
        if overrides.thresholds_age.is_some() || overrides.thresholds_race.is_some() {
            written.thresholds = Thresholds::new(
                overrides.thresholds_age.unwrap_or(written.thresholds.age()),
                overrides.thresholds_race.unwrap_or(written.thresholds.race()),
            )
            .map_err(CliError::config)?;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_written(written, &base)
    }

    pub fn from_written(written: RunConfig, base: &Path) -> Result<Self, CliError> {
        let mut config = written.clone();
        config.seed_manifest = resolve(base, &config.seed_manifest);
        config.corpus_index = config.corpus_index.as_deref().map(|p| resolve(base, p));
        config.lexicon = resolve(base, &config.lexicon);
        config.backend = resolve(base, &config.backend);
        config.analyzer = config.analyzer.as_deref().map(|p| resolve(base, p));
        config.output_dir = resolve(base, &config.output_dir);

        if config.per_group == 0 {
            return Err(CliError::config("per_group must be at least 1"));
        }
        if config.concurrency == 0 {
            return Err(CliError::config("concurrency must be at least 1"));
        }
        if config.max_attempts == 0 {
            return Err(CliError::config("max_attempts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&config.failure_ceiling) {
            return Err(CliError::config("failure_ceiling must lie in [0, 1]"));
        }
        if config.top_k == 0 {
            return Err(CliError::config("top_k must be at least 1"));
        }
        if config.variant == Variant::Miti && config.mitigation_suffix.trim().is_empty() {
            return Err(CliError::config("variant miti needs a non-empty mitigation_suffix"));
        }
        require_file(&config.lexicon, "lexicon")?;
        require_file(&config.backend, "backend config")?;
        let backend: BackendConfig = read_json(&config.backend, "backend config")?;
        let analyzer = match &config.analyzer {
            Some(p) => {
                require_file(p, "analyzer config")?;
                read_json(p, "analyzer config")?
            }
            None => AnalyzerConfig::Sidecar,
        };
        if let Some(index) = &config.corpus_index {
            require_file(index, "corpus index")?;
        }
        Ok(Self { config, written, backend, analyzer })
    }

    /// The same configuration with another variant.
    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut out = self.clone();
        out.config.variant = variant;
        out.written.variant = variant;
        out
    }

    /// Fields that influence generated images or their assessment, with the
    /// backend and analyzer configs inlined.
    fn generation_view(&self) -> serde_json::Value {
        let w = &self.written;
        serde_json::json!({
            "seed_manifest": w.seed_manifest,
            "lexicon": w.lexicon,
            "backend": self.backend,
            "analyzer": self.analyzer,
            "exposure": w.exposure,
            "face_region": w.face_region,
            "rng_seed": w.rng_seed,
            "variant": w.variant,
            "mitigation_suffix": if w.variant == Variant::Miti { Some(&w.mitigation_suffix) } else { None },
            "allow_partial_groups": w.allow_partial_groups,
            "max_attempts": w.max_attempts,
        })
    }

    /// Everything except `output_dir` and `concurrency`.
    pub fn semantic_view(&self) -> serde_json::Value {
        let mut v = self.generation_view();
        let w = &self.written;
        let extra = serde_json::json!({
            "corpus_index": w.corpus_index,
            "per_group": w.per_group,
            "thresholds": w.thresholds,
            "failure_ceiling": w.failure_ceiling,
            "top_k": w.top_k,
        });
        if let (Some(m), serde_json::Value::Object(e)) = (v.as_object_mut(), extra) {
            m.extend(e);
        }
        v
    }

    pub fn run_id(&self) -> String {
        digest(&self.generation_view())
    }

    pub fn config_hash(&self) -> String {
        digest(&self.semantic_view())
    }

    pub fn run_dir(&self) -> PathBuf {
        self.config.output_dir.join("runs").join(self.run_id())
    }

    pub fn reports_root(&self) -> PathBuf {
        self.config.output_dir.join("reports")
    }
}

/// First 16 hex digits of the SHA-256 of the compact JSON (object keys sorted).
fn digest(v: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(v).expect("serializable");
    let hex = format!("{:x}", Sha256::digest(bytes));
    hex[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(dir: &Path, body: &str) -> PathBuf {
        std::fs::write(dir.join("lexicon.csv"), "word,domain,article_override,score1\nnurse,profession,,1\n").unwrap();
        std::fs::write(dir.join("backend.json"), r#"{"kind":"mock"}"#).unwrap();
        let path = dir.join("run.json");
        std::fs::write(&path, body).unwrap();
        path
    }

    const BASE: &str =
        r#"{"seed_manifest":"seeds.csv","lexicon":"lexicon.csv","backend":"backend.json","output_dir":"out"}"#;

    #[test]
    fn defaults_and_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let c = LoadedConfig::load(&setup(dir.path(), BASE), &Overrides::default()).unwrap();
        assert_eq!(c.config.lexicon, dir.path().join("lexicon.csv"));
        assert_eq!(c.config.per_group, 3);
        assert_eq!(c.config.mitigation_suffix, DEFAULT_MITIGATION_SUFFIX);
        assert_eq!(c.analyzer, AnalyzerConfig::Sidecar);
        assert_eq!(c.run_dir(), dir.path().join("out").join("runs").join(c.run_id()));
    }

    #[test]
    fn hashes_ignore_key_order_and_bookkeeping_fields() {
        let dir = tempfile::tempdir().unwrap();
        let a = LoadedConfig::load(&setup(dir.path(), BASE), &Overrides::default()).unwrap();
        let reordered = r#"{"output_dir":"elsewhere","backend":"backend.json","concurrency":16,
            "lexicon":"lexicon.csv","seed_manifest":"seeds.csv"}"#;
        let b = LoadedConfig::load(&setup(dir.path(), reordered), &Overrides::default()).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.run_id(), b.run_id());
    }

    #[test]
    fn meaningful_fields_change_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let path = setup(dir.path(), BASE);
        let base = LoadedConfig::load(&path, &Overrides::default()).unwrap();
        let thr = LoadedConfig::load(&path, &Overrides { thresholds_age: Some(15.0), ..Default::default() }).unwrap();
        assert_ne!(base.config_hash(), thr.config_hash());
        assert_eq!(base.run_id(), thr.run_id());
        let miti =
            LoadedConfig::load(&path, &Overrides { variant: Some(Variant::Miti), ..Default::default() }).unwrap();
        assert_ne!(base.run_id(), miti.run_id());
        let seed = LoadedConfig::load(&path, &Overrides { rng_seed: Some(9), ..Default::default() }).unwrap();
        assert_ne!(base.run_id(), seed.run_id());
        std::fs::write(dir.path().join("backend.json"), r#"{"kind":"mock","model_id":"other"}"#).unwrap();
        let other = LoadedConfig::load(&path, &Overrides::default()).unwrap();
        assert_ne!(base.run_id(), other.run_id());
    }

    #[test]
    fn invalid_configs() {
        let dir = tempfile::tempdir().unwrap();
        let bad = [
            r#"{"seed_manifest":"s","lexicon":"missing.csv","backend":"backend.json","output_dir":"o"}"#,
            r#"{"seed_manifest":"s","lexicon":"lexicon.csv","backend":"backend.json","output_dir":"o","variant":"miti","mitigation_suffix":" "}"#,
            r#"{"seed_manifest":"s","lexicon":"lexicon.csv","backend":"backend.json","output_dir":"o","thresholds":{"age":0,"race":20}}"#,
            r#"{"seed_manifest":"s","lexicon":"lexicon.csv","backend":"backend.json","output_dir":"o","typo":1}"#,
            r#"{"seed_manifest":"s","lexicon":"lexicon.csv","backend":"backend.json","output_dir":"o","failure_ceiling":2}"#,
        ];
        for body in bad {
            let err = LoadedConfig::load(&setup(dir.path(), body), &Overrides::default()).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{body}: {err}");
        }
    }
}
