//! Image-edit backends and the generation matrix.
//!
//! A [`GenerationRequest`] pairs one seed portrait with one prompt. Backends
//! turn requests into edited images; [`Cache`] stores every result under a
//! fingerprint of the request so repeated and resumed runs never call a
//! backend twice for the same input.

mod cache;
mod http_backend;
mod matrix;
mod mock;
pub mod mock_server;
mod synthetic;

use std::collections::BTreeMap;
use std::path::PathBuf;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{sanitize_model_id, Cache};
pub use http_backend::{
    HttpBackend, HttpBackendConfig, ImageEncoding, RequestTemplate, ResponseFormat, ResponsePath, RetryPolicy,
    TokenBucket,
};
pub use matrix::{
    generate, load_manifest, regenerate_until_valid, run_matrix, MatrixOptions, MatrixOutcome, Regeneration,
};
pub use mock::MockBackend;
pub use synthetic::{SyntheticBackend, SyntheticBiasProfile, WordRule};

use crate::corpus::{Prompt, SeedImage};
use crate::vision::{FacesDocument, VisionError};

/// Pass-through generation parameters (strength, steps, guidance, ...).
pub type Params = BTreeMap<String, serde_json::Value>;

pub const MITIGATION_SEPARATOR: &str = ", ";
pub const DEFAULT_MITIGATION_SUFFIX: &str = "maintain the same gender/race/age as the input image";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Mock,
    SyntheticBias,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend timed out: {0}")]
    BackendTimeout(String),
    #[error("backend rejected request with status {status}: {excerpt}")]
    BackendRejected { status: u16, excerpt: String },
    #[error("backend refused the prompt: {0}")]
    SafetyRefusal(String),
    #[error("cache entry {path} is corrupt: {reason}")]
    CacheCorruption { path: PathBuf, reason: String },
    #[error("{failed} of {total} generations failed, above the {ceiling} ceiling")]
    ExcessiveFailureRate { failed: usize, total: usize, ceiling: f64 },
    #[error("backend unreachable: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("invalid backend configuration: {0}")]
    InvalidConfig(String),
    #[error("assessment failed: {0}")]
    Assessment(#[from] VisionError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::BackendTimeout(_) | BackendError::Transport(_) => true,
            BackendError::BackendRejected { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Rejects non-scalar parameter values.
pub fn validate_params(params: &Params) -> Result<(), BackendError> {
    for (k, v) in params {
        if v.is_array() || v.is_object() {
            return Err(BackendError::InvalidConfig(format!("parameter {k:?} must be a scalar")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub seed: SeedImage,
    pub prompt: Prompt,
    pub model_id: String,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub attempt: u32,
    #[serde(default)]
    pub mitigation_suffix: Option<String>,
}

impl GenerationRequest {
    pub fn new(seed: SeedImage, prompt: Prompt, model_id: impl Into<String>) -> Self {
        Self { seed, prompt, model_id: model_id.into(), params: Params::new(), attempt: 0, mitigation_suffix: None }
    }

    /// Prompt text sent to the backend.
    pub fn effective_prompt(&self) -> String {
        match &self.mitigation_suffix {
            Some(s) => format!("{}{MITIGATION_SEPARATOR}{s}", self.prompt.text),
            None => self.prompt.text.clone(),
        }
    }

    /// Stable hash of seed, prompt, model, parameters and suffix. The
    /// attempt number is deliberately excluded.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::json!({
            "model_id": self.model_id,
            "params": self.params,
            "prompt_id": self.prompt.id,
            "seed_id": self.seed.id,
            "suffix": self.mitigation_suffix,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        format!("{digest:x}")[..32].to_string()
    }

    pub fn with_attempt(&self, attempt: u32) -> Self {
        Self { attempt, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Ok,
    Invalid,
    Failed,
}

/// One line of the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub fingerprint: String,
    pub seed_id: String,
    pub prompt_id: String,
    pub model_id: String,
    pub attempt: u32,
    pub image_path: PathBuf,
    pub backend_kind: BackendKind,
    pub wall_time_ms: u64,
    pub status: GenerationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GenerationRecord {
    pub fn failed(request: &GenerationRequest, kind: BackendKind, wall_time_ms: u64, error: &BackendError) -> Self {
        Self {
            fingerprint: request.fingerprint(),
            seed_id: request.seed.id.clone(),
            prompt_id: request.prompt.id.clone(),
            model_id: request.model_id.clone(),
            attempt: request.attempt,
            image_path: PathBuf::new(),
            backend_kind: kind,
            wall_time_ms,
            status: GenerationStatus::Failed,
            error: Some(error.to_string()),
        }
    }
}

/// An edited image, optionally with faces known to the backend (synthetic
/// and mock backends only).
#[derive(Debug, Clone, PartialEq)]
pub struct EditedImage {
    pub image: RgbImage,
    pub faces: Option<FacesDocument>,
}

pub trait ImageBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn edit(&self, request: &GenerationRequest) -> Result<EditedImage, BackendError>;
}

/// Backend section of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Http(Box<HttpBackendConfig>),
    Mock {
        #[serde(default = "mock_model_id")]
        model_id: String,
        #[serde(default)]
        params: Params,
    },
    SyntheticBias {
        #[serde(default = "synthetic_model_id")]
        model_id: String,
        #[serde(default)]
        params: Params,
        profile: SyntheticBiasProfile,
    },
}

fn mock_model_id() -> String {
    "mock".into()
}

fn synthetic_model_id() -> String {
    "synthetic".into()
}

impl BackendConfig {
    pub fn model_id(&self) -> &str {
        match self {
            BackendConfig::Http(c) => &c.model_id,
            BackendConfig::Mock { model_id, .. } | BackendConfig::SyntheticBias { model_id, .. } => model_id,
        }
    }

    pub fn params(&self) -> &Params {
        match self {
            BackendConfig::Http(c) => &c.params,
            BackendConfig::Mock { params, .. } | BackendConfig::SyntheticBias { params, .. } => params,
        }
    }

    /// Builds the backend; `rng_seed` seeds retry jitter.
    pub fn build(&self, rng_seed: u64) -> Result<Box<dyn ImageBackend>, BackendError> {
        validate_params(self.params())?;
        Ok(match self {
            BackendConfig::Http(c) => Box::new(HttpBackend::new((**c).clone(), rng_seed)?),
            BackendConfig::Mock { .. } => Box::new(MockBackend::echo()),
            BackendConfig::SyntheticBias { profile, .. } => Box::new(SyntheticBackend::new(profile.clone())?),
        })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use std::path::Path;

    use super::*;
    use crate::corpus::{build_prompt, AgeBand, DemographicGroup, Domain, Gender, Race};
    use crate::fixtures::{write_portrait, FaceSpec, PORTRAIT_SIZE};

    pub fn seed_at(dir: &Path, id: &str, gender: Gender, skin: [u8; 3]) -> SeedImage {
        let path = dir.join(format!("{id}.png"));
        write_portrait(&path, PORTRAIT_SIZE, PORTRAIT_SIZE, &[FaceSpec::centered(gender, 30.0, skin)]).unwrap();
        SeedImage {
            id: id.into(),
            image_path: path,
            group: DemographicGroup::new(Race::White, gender, AgeBand::YoungAdult),
            source_tag: "test".into(),
        }
    }

    pub fn request(seed: SeedImage, word: &str) -> GenerationRequest {
        GenerationRequest::new(seed, build_prompt(word, Domain::Profession).unwrap(), "m")
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::corpus::Gender;

    #[test]
    fn fingerprint_ignores_param_order_and_attempt() {
        let dir = tempfile::tempdir().unwrap();
        let seed = seed_at(dir.path(), "s", Gender::Male, [150; 3]);
        let mut a = request(seed.clone(), "nurse");
        let mut b = request(seed, "nurse");
        a.params.insert("strength".into(), 0.7.into());
        a.params.insert("steps".into(), 30.into());
        b.params.insert("steps".into(), 30.into());
        b.params.insert("strength".into(), 0.7.into());
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint(), a.with_attempt(3).fingerprint());
        assert_eq!(a.fingerprint().len(), 32);
        b.params.insert("steps".into(), 31.into());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn mitigation_suffix_changes_prompt_and_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let req = request(seed_at(dir.path(), "s", Gender::Male, [150; 3]), "nurse");
        let miti = GenerationRequest { mitigation_suffix: Some(DEFAULT_MITIGATION_SUFFIX.into()), ..req.clone() };
        assert_eq!(
            miti.effective_prompt(),
            "a person who is a nurse, maintain the same gender/race/age as the input image"
        );
        assert_eq!(req.effective_prompt(), "a person who is a nurse");
        assert_ne!(req.fingerprint(), miti.fingerprint());
    }

    #[test]
    fn non_scalar_params_rejected() {
        let mut p = Params::new();
        p.insert("a".into(), serde_json::json!([1, 2]));
        assert!(validate_params(&p).is_err());
    }

    #[test]
    fn transient_classification() {
        assert!(BackendError::BackendRejected { status: 503, excerpt: String::new() }.is_transient());
        assert!(BackendError::BackendRejected { status: 429, excerpt: String::new() }.is_transient());
        assert!(!BackendError::BackendRejected { status: 400, excerpt: String::new() }.is_transient());
        assert!(!BackendError::SafetyRefusal(String::new()).is_transient());
    }

    #[test]
    fn config_parses_by_kind() {
        let c: BackendConfig = serde_json::from_str(
            r#"{"kind":"synthetic_bias","profile":{"rng_seed":1,"rules":{"nurse":{"gender_flip_prob":1.0}}}}"#,
        )
        .unwrap();
        assert_eq!(c.model_id(), "synthetic");
        let m: BackendConfig = serde_json::from_str(r#"{"kind":"mock","model_id":"echo"}"#).unwrap();
        assert_eq!(m.model_id(), "echo");
    }
}
