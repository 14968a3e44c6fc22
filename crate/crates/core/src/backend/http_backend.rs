//! Generic image-edit HTTP client configured by a request template.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendKind, EditedImage, GenerationRequest, ImageBackend, Params};
use crate::http::{self, Part};
use crate::sampling::{run_rng, RunRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageEncoding {
    #[default]
    Multipart,
    JsonBase64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RequestTemplate {
    pub path: String,
    pub encoding: ImageEncoding,
    pub image_field: String,
    pub prompt_field: String,
    /// Field carrying `base_seed + attempt`, if the API takes a seed.
    pub seed_field: Option<String>,
    pub model_field: Option<String>,
    pub auth_header: String,
    pub auth_prefix: String,
    /// Constant fields sent with every request.
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Default for RequestTemplate {
    fn default() -> Self {
        Self {
            path: "/v1/images/edits".into(),
            encoding: ImageEncoding::Multipart,
            image_field: "image".into(),
            prompt_field: "prompt".into(),
            seed_field: None,
            model_field: None,
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    /// Base64 image (optionally a data URL) at `pointer`.
    #[default]
    Base64,
    /// Image URL at `pointer`, fetched with a GET.
    Url,
    /// The body is the image.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResponsePath {
    pub format: ResponseFormat,
    /// JSON pointer into the response body.
    pub pointer: String,
}

impl Default for ResponsePath {
    fn default() -> Self {
        Self { format: ResponseFormat::Base64, pointer: "/data/0/b64_json".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_tries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_tries: 5, base_delay_ms: 500, max_delay_ms: 30_000 }
    }
}

impl RetryPolicy {
    /// Delay before try `k + 1` (k >= 1), scaled by `jitter` in `[0.5, 1)`.
    pub fn delay(&self, k: u32, jitter: f64) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << (k - 1).min(30));
        Duration::from_secs_f64(exp.min(self.max_delay_ms) as f64 * jitter / 1000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub model_id: String,
    pub base_url: String,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default)]
    pub request_template: RequestTemplate,
    #[serde(default)]
    pub response_path: ResponsePath,
    #[serde(default)]
    pub params: Params,
    #[serde(default = "default_rate")]
    pub rate_limit_per_sec: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Body substring that marks a safety refusal.
    #[serde(default)]
    pub refusal_marker: Option<String>,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_rate() -> f64 {
    1.0
}

fn default_timeout() -> u64 {
    120
}

/// Token bucket holding at most one second of tokens.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate_per_sec: f64) -> Self {
        let capacity = rate_per_sec.max(1.0);
        Self { rate: rate_per_sec, capacity, state: Mutex::new((capacity.min(1.0), Instant::now())) }
    }

    /// Blocks until a token is available and takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut s = self.state.lock().expect("bucket lock");
                let now = Instant::now();
                s.0 = (s.0 + now.duration_since(s.1).as_secs_f64() * self.rate).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                (1.0 - s.0) / self.rate
            };
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    bucket: TokenBucket,
    rng: Mutex<RunRng>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig, rng_seed: u64) -> Result<Self, BackendError> {
        let bad = |m: String| BackendError::InvalidConfig(m);
        if !(config.rate_limit_per_sec.is_finite() && config.rate_limit_per_sec > 0.0) {
            return Err(bad(format!("rate_limit_per_sec must be positive, got {}", config.rate_limit_per_sec)));
        }
        if config.retry.max_tries == 0 {
            return Err(bad("retry.max_tries must be at least 1".into()));
        }
        let api_key = match &config.auth_env_var {
            Some(var) => Some(std::env::var(var).map_err(|_| bad(format!("environment variable {var} is not set")))?),
            None => None,
        };
        Ok(Self {
            agent: http::agent(Duration::from_secs(config.timeout_secs)),
            bucket: TokenBucket::new(config.rate_limit_per_sec),
            rng: Mutex::new(run_rng(rng_seed)),
            api_key,
            config,
        })
    }

    fn url(&self, path: &str) -> String {
        if path.starts_with("http://") || path.starts_with("https://") {
            return path.to_string();
        }
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path.trim_start_matches('/'))
    }

    fn fields(&self, request: &GenerationRequest) -> Vec<(String, serde_json::Value)> {
        let t = &self.config.request_template;
        let mut fields: Vec<(String, serde_json::Value)> =
            t.extra.iter().chain(&request.params).map(|(k, v)| (k.clone(), v.clone())).collect();
        fields.push((t.prompt_field.clone(), request.effective_prompt().into()));
        if let Some(f) = &t.model_field {
            fields.push((f.clone(), request.model_id.clone().into()));
        }
        if let Some(f) = &t.seed_field {
            fields.push((f.clone(), (self.config.base_seed + u64::from(request.attempt)).into()));
        }
        fields
    }

    fn send_once(&self, request: &GenerationRequest) -> Result<EditedImage, BackendError> {
        let t = &self.config.request_template;
        let image_bytes = std::fs::read(&request.seed.image_path)?;
        let fields = self.fields(request);
        let (content_type, body) = match t.encoding {
            ImageEncoding::Multipart => {
                let texts: Vec<(String, String)> = fields
                    .iter()
                    .map(|(k, v)| (k.clone(), v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())))
                    .collect();
                let filename = request
                    .seed
                    .image_path
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "seed.png".into());
                let mut parts: Vec<Part<'_>> = vec![Part::File {
                    name: &t.image_field,
                    filename: &filename,
                    content_type: "application/octet-stream",
                    bytes: &image_bytes,
                }];
                parts.extend(texts.iter().map(|(k, v)| Part::Text { name: k, value: v }));
                http::multipart(&parts, "fairlens-edit-boundary")
            }
            ImageEncoding::JsonBase64 => {
                let mut obj: serde_json::Map<String, serde_json::Value> = fields.into_iter().collect();
                obj.insert(
                    t.image_field.clone(),
                    base64::engine::general_purpose::STANDARD.encode(&image_bytes).into(),
                );
                ("application/json".to_string(), serde_json::to_vec(&obj).expect("serializable"))
            }
        };

        let mut req = self.agent.post(self.url(&t.path)).header("Content-Type", &content_type);
        if let Some(key) = &self.api_key {
            req = req.header(&t.auth_header, &format!("{}{key}", t.auth_prefix));
        }
        let (status, payload) = read(req.send(&body[..]))?;
        if let Some(marker) = &self.config.refusal_marker {
            if contains(&payload, marker.as_bytes()) {
                return Err(BackendError::SafetyRefusal(http::excerpt(&payload)));
            }
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::BackendRejected { status, excerpt: http::excerpt(&payload) });
        }

        let image_bytes = match self.config.response_path.format {
            ResponseFormat::Raw => payload,
            format => {
                let json: serde_json::Value = serde_json::from_slice(&payload)
                    .map_err(|e| BackendError::MalformedResponse(format!("{e}: {}", http::excerpt(&payload))))?;
                let pointer = &self.config.response_path.pointer;
                let value = json.pointer(pointer).and_then(|v| v.as_str()).ok_or_else(|| {
                    BackendError::MalformedResponse(format!("no string at {pointer}: {}", http::excerpt(&payload)))
                })?;
                if format == ResponseFormat::Url {
                    let (status, bytes) = read(self.agent.get(self.url(value)).call())?;
                    if !(200..300).contains(&status) {
                        return Err(BackendError::BackendRejected { status, excerpt: http::excerpt(&bytes) });
                    }
                    bytes
                } else {
                    let b64 = value.split_once(";base64,").map_or(value, |(_, d)| d);
                    base64::engine::general_purpose::STANDARD
                        .decode(b64.trim())
                        .map_err(|e| BackendError::MalformedResponse(format!("bad base64 image: {e}")))?
                }
            }
        };
        let image = image::load_from_memory(&image_bytes)
            .map_err(|e| BackendError::MalformedResponse(format!("undecodable image: {e}")))?
            .to_rgb8();
        Ok(EditedImage { image, faces: None })
    }
}

fn map_transport(e: ureq::Error) -> BackendError {
    match e {
        ureq::Error::Timeout(t) => BackendError::BackendTimeout(t.to_string()),
        ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::Protocol(_)
        | ureq::Error::BodyStalled => BackendError::Transport(e.to_string()),
        other => BackendError::MalformedResponse(other.to_string()),
    }
}

fn read(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<(u16, Vec<u8>), BackendError> {
    let mut resp = resp.map_err(map_transport)?;
    let status = resp.status().as_u16();
    let body = resp.body_mut().with_config().limit(http::MAX_BODY_BYTES).read_to_vec().map_err(map_transport)?;
    Ok((status, body))
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

impl ImageBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn edit(&self, request: &GenerationRequest) -> Result<EditedImage, BackendError> {
        let retry = self.config.retry;
        let mut tries = 0;
        loop {
            tries += 1;
            self.bucket.acquire();
            match self.send_once(request) {
                Err(e) if e.is_transient() && tries < retry.max_tries => {
                    let jitter = 0.5 + 0.5 * self.rng.lock().expect("rng lock").random::<f64>();
                    let delay = retry.delay(tries, jitter);
                    tracing::warn!(error = %e, tries, delay_ms = delay.as_millis() as u64, "retrying generation");
                    std::thread::sleep(delay);
                }
                other => return other,
            }
        }
    }
}
