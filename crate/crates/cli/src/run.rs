//! Artifact layout of one run and its `run.json` manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use fairlens_core::jsonl;
use serde::{Deserialize, Serialize};

use crate::config::LoadedConfig;
use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Paths of a run's artifacts under `<output_dir>/runs/<run_id>/`.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn prompts(&self) -> PathBuf {
        self.dir.join("prompts.json")
    }
    pub fn generation(&self) -> PathBuf {
        self.dir.join("generation.jsonl")
    }
    pub fn failures(&self) -> PathBuf {
        self.dir.join("failures.jsonl")
    }
    pub fn cache(&self) -> PathBuf {
        self.dir.join("cache")
    }
    pub fn properties(&self) -> PathBuf {
        self.dir.join("properties.jsonl")
    }
    pub fn pairs(&self) -> PathBuf {
        self.dir.join("pairs.jsonl")
    }
    pub fn words(&self) -> PathBuf {
        self.dir.join("words.jsonl")
    }
    pub fn models(&self) -> PathBuf {
        self.dir.join("models.jsonl")
    }
    pub fn exclusions(&self) -> PathBuf {
        self.dir.join("exclusions.json")
    }
    pub fn mitigation(&self) -> PathBuf {
        self.dir.join("mitigation.json")
    }
    pub fn ablation(&self) -> PathBuf {
        self.dir.join("ablation")
    }
    pub fn manifest(&self) -> PathBuf {
        self.dir.join("run.json")
    }

    /// Fails with a dependency error unless `path` exists.
    pub fn require(&self, path: PathBuf, stage: &'static str, needs: &'static str) -> Result<PathBuf, CliError> {
        if path.is_file() {
            Ok(path)
        } else {
            Err(CliError::StageDependencyMissing { stage, needs, path })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_at_unix_ms: u64,
    pub config_hash: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Option<Self>, CliError> {
        match std::fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| CliError::failure(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.get(name)
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| u64::try_from(d.as_millis()).unwrap_or(u64::MAX)).unwrap_or(0)
}

/// Marks `stage` complete in the run's `run.json`, creating it if needed.
pub fn record_stage(
    cfg: &LoadedConfig,
    paths: &RunPaths,
    stage: &str,
    detail: serde_json::Value,
) -> Result<(), CliError> {
    let path = paths.manifest();
    let mut manifest = RunManifest::load(&path)?.unwrap_or_else(|| RunManifest {
        run_id: cfg.run_id(),
        tool_version: TOOL_VERSION.into(),
        config_hash: cfg.config_hash(),
        config: cfg.semantic_view(),
        stages: BTreeMap::new(),
    });
    manifest.tool_version = TOOL_VERSION.into();
    manifest.config_hash = cfg.config_hash();
    manifest.config = cfg.semantic_view();
    manifest.stages.insert(
        stage.to_string(),
        StageRecord { completed_at_unix_ms: now_ms(), config_hash: cfg.config_hash(), detail },
    );
    let bytes = serde_json::to_vec_pretty(&manifest).expect("serializable");
    jsonl::write_bytes(&path, &bytes)?;
    Ok(())
}
