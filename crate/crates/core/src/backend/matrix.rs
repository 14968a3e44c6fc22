//! Cached generation, regeneration of invalid outputs, and the resumable
//! seed x prompt matrix.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use super::{BackendError, Cache, GenerationRecord, GenerationRequest, GenerationStatus, ImageBackend, Params};
use crate::corpus::{PromptList, SeedSet};
use crate::vision::{ImageProperties, VisionError};

/// Returns the cached record for `request` or calls the backend and caches
/// the result.
pub fn generate(
    request: &GenerationRequest,
    backend: &dyn ImageBackend,
    cache: &Cache,
) -> Result<GenerationRecord, BackendError> {
    if let Some(record) = cache.lookup(request)? {
        return Ok(record);
    }
    let start = Instant::now();
    let edited = backend.edit(request)?;
    let ms = u64::try_from(start.elapsed().as_millis()).unwrap_or(u64::MAX);
    cache.store(request, &edited, backend.kind(), ms)
}

/// Generates attempts `0, 1, ...` until `check` accepts the assessed
/// output. After `max_attempts` rejections the last record is returned with
/// status [`GenerationStatus::Invalid`].
pub fn regenerate_until_valid(
    request: &GenerationRequest,
    backend: &dyn ImageBackend,
    cache: &Cache,
    assess: &dyn Fn(&Path) -> Result<ImageProperties, VisionError>,
    check: &dyn Fn(&ImageProperties) -> bool,
    max_attempts: u32,
) -> Result<GenerationRecord, BackendError> {
    if max_attempts == 0 {
        return Err(BackendError::InvalidConfig("max_attempts must be at least 1".into()));
    }
    let mut last = None;
    for attempt in 0..max_attempts {
        let record = generate(&request.with_attempt(attempt), backend, cache)?;
        if check(&assess(&record.image_path)?) {
            return Ok(record);
        }
        last = Some(record);
    }
    let mut record = last.expect("at least one attempt");
    record.status = GenerationStatus::Invalid;
    Ok(record)
}

/// Regeneration policy for [`run_matrix`].
#[derive(Clone, Copy)]
pub struct Regeneration<'a> {
    pub assess: &'a (dyn Fn(&Path) -> Result<ImageProperties, VisionError> + Sync),
    pub check: &'a (dyn Fn(&ImageProperties) -> bool + Sync),
    pub max_attempts: u32,
}

pub struct MatrixOptions<'a> {
    pub model_id: String,
    pub params: Params,
    pub mitigation_suffix: Option<String>,
    pub concurrency_limit: usize,
    /// Largest tolerated fraction of failed requests.
    pub failure_ceiling: f64,
    /// Append-only JSONL of completed (ok or invalid) records.
    pub manifest_path: PathBuf,
    /// Append-only JSONL of failed attempts, if wanted.
    pub failures_path: Option<PathBuf>,
    pub regeneration: Option<Regeneration<'a>>,
    /// Process at most this many requests not yet in the manifest.
    pub max_new: Option<usize>,
}

impl MatrixOptions<'_> {
    pub fn new(model_id: impl Into<String>, manifest_path: impl Into<PathBuf>) -> Self {
        Self {
            model_id: model_id.into(),
            params: Params::new(),
            mitigation_suffix: None,
            concurrency_limit: 1,
            failure_ceiling: 0.05,
            manifest_path: manifest_path.into(),
            failures_path: None,
            regeneration: None,
            max_new: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOutcome {
    /// One record per processed request in seed-major matrix order; failed
    /// requests appear with status `Failed`.
    pub records: Vec<GenerationRecord>,
    /// Requests already present in the manifest.
    pub resumed: usize,
    pub completed: usize,
    pub failed: usize,
    /// Requests left for a later run because of `max_new`.
    pub deferred: usize,
}

/// Reads a run manifest, ignoring a trailing partial line.
pub fn load_manifest(path: &Path) -> Result<Vec<GenerationRecord>, BackendError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BackendError::CacheCorruption {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Opens a JSONL file for appending, dropping a partial last line.
fn open_append(path: &Path) -> Result<std::fs::File, BackendError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
    let text = std::fs::read(path)?;
    if !text.is_empty() && !text.ends_with(b"\n") {
        let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        file.set_len(keep as u64)?;
        file.seek(SeekFrom::End(0))?;
    }
    Ok(file)
}

fn append_line(file: &Mutex<std::fs::File>, record: &GenerationRecord) -> Result<(), BackendError> {
    let mut line = serde_json::to_vec(record).expect("serializable");
    line.push(b'\n');
    let mut f = file.lock().expect("manifest lock");
    f.write_all(&line)?;
    f.flush()?;
    Ok(())
}

/// Generates every (seed, prompt) pair not yet recorded in the manifest.
///
/// Up to `concurrency_limit` requests are in flight. Each completed request
/// is appended to the manifest immediately, so an interrupted run resumes
/// where it stopped. Failures are recorded and tolerated until they exceed
/// `failure_ceiling` of the whole matrix, which aborts the run.
pub fn run_matrix(
    seeds: &SeedSet,
    prompts: &PromptList,
    backend: &dyn ImageBackend,
    cache: &Cache,
    options: &MatrixOptions<'_>,
) -> Result<MatrixOutcome, BackendError> {
    let requests: Vec<GenerationRequest> = seeds
        .seeds()
        .iter()
        .flat_map(|seed| {
            prompts.prompts().iter().map(move |prompt| GenerationRequest {
                seed: seed.clone(),
                prompt: prompt.clone(),
                model_id: options.model_id.clone(),
                params: options.params.clone(),
                attempt: 0,
                mitigation_suffix: options.mitigation_suffix.clone(),
            })
        })
        .collect();
    let total = requests.len();

    let done: HashMap<String, GenerationRecord> =
        load_manifest(&options.manifest_path)?.into_iter().map(|r| (r.fingerprint.clone(), r)).collect();
    let mut pending: Vec<usize> = (0..total).filter(|&i| !done.contains_key(&requests[i].fingerprint())).collect();
    let resumed = total - pending.len();
    let deferred = options.max_new.map_or(0, |m| pending.len().saturating_sub(m));
    pending.truncate(pending.len() - deferred);

    let manifest = Mutex::new(open_append(&options.manifest_path)?);
    let failures = options.failures_path.as_deref().map(open_append).transpose()?.map(Mutex::new);
    let results: Vec<Mutex<Option<GenerationRecord>>> = (0..total).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let completed = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let io_error: Mutex<Option<BackendError>> = Mutex::new(None);
    let workers = options.concurrency_limit.max(1).min(pending.len().max(1));

    tracing::info!(total, resumed, pending = pending.len(), deferred, workers, "generation matrix");
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let request = &requests[i];
                let start = Instant::now();
                let outcome = match &options.regeneration {
                    Some(r) => regenerate_until_valid(request, backend, cache, r.assess, r.check, r.max_attempts),
                    None => generate(request, backend, cache),
                };
                let (record, sink) = match outcome {
                    Ok(record) => {
                        completed.fetch_add(1, Ordering::SeqCst);
                        (record, Some(&manifest))
                    }
                    Err(e) => {
                        let n = failed.fetch_add(1, Ordering::SeqCst) + 1;
                        tracing::warn!(seed = %request.seed.id, prompt = %request.prompt.id, error = %e, "generation failed");
                        if n as f64 > options.failure_ceiling * total as f64 {
                            abort.store(true, Ordering::SeqCst);
                        }
                        let ms = u64::try_from(start.elapsed().as_millis()).unwrap_or(u64::MAX);
                        (GenerationRecord::failed(request, backend.kind(), ms, &e), failures.as_ref())
                    }
                };
                if let Some(sink) = sink {
                    if let Err(e) = append_line(sink, &record) {
                        *io_error.lock().expect("lock") = Some(e);
                        abort.store(true, Ordering::SeqCst);
                    }
                }
                *results[i].lock().expect("lock") = Some(record);
            });
        }
    });

    if let Some(e) = io_error.into_inner().expect("lock") {
        return Err(e);
    }
    let failed = failed.into_inner();
    if abort.into_inner() || failed as f64 > options.failure_ceiling * total as f64 {
        return Err(BackendError::ExcessiveFailureRate { failed, total, ceiling: options.failure_ceiling });
    }
    let records = requests
        .iter()
        .zip(results)
        .filter_map(|(req, slot)| slot.into_inner().expect("lock").or_else(|| done.get(&req.fingerprint()).cloned()))
        .collect();
    Ok(MatrixOutcome { records, resumed, completed: completed.into_inner(), failed, deferred })
}
