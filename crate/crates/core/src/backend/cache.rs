//! On-disk result cache: `<root>/<model_id>/<fingerprint>.png` with a
//! `<fingerprint>.meta.json` record written last. Later attempts use the
//! stem `<fingerprint>-a<k>`.

use std::path::{Path, PathBuf};

use super::{BackendError, BackendKind, EditedImage, GenerationRecord, GenerationRequest, GenerationStatus};
use crate::vision::sidecar_path;

/// Keeps ASCII alphanumerics, `-`, `_` and `.`; everything else becomes `_`.
pub fn sanitize_model_id(model_id: &str) -> String {
    let s: String = model_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    match s.as_str() {
        "" | "." | ".." => format!("_{s}"),
        _ => s,
    }
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn stem(request: &GenerationRequest) -> String {
        let fp = request.fingerprint();
        match request.attempt {
            0 => fp,
            k => format!("{fp}-a{k}"),
        }
    }

    fn dir(&self, request: &GenerationRequest) -> PathBuf {
        self.root.join(sanitize_model_id(&request.model_id))
    }

    pub fn image_path(&self, request: &GenerationRequest) -> PathBuf {
        self.dir(request).join(format!("{}.png", Self::stem(request)))
    }

    pub fn meta_path(&self, request: &GenerationRequest) -> PathBuf {
        self.dir(request).join(format!("{}.meta.json", Self::stem(request)))
    }

    /// The stored record for this exact request and attempt, if complete.
    pub fn lookup(&self, request: &GenerationRequest) -> Result<Option<GenerationRecord>, BackendError> {
        let meta = self.meta_path(request);
        let bytes = match std::fs::read(&meta) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let corrupt = |reason: String| BackendError::CacheCorruption { path: meta.clone(), reason };
        let record: GenerationRecord = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
        if record.fingerprint != request.fingerprint() || record.attempt != request.attempt {
            return Err(corrupt("record does not match request".into()));
        }
        if record.status != GenerationStatus::Ok {
            return Err(corrupt(format!("unexpected status {:?}", record.status)));
        }
        image::image_dimensions(&record.image_path).map_err(|e| corrupt(format!("image unreadable: {e}")))?;
        Ok(Some(record))
    }

    /// Persists an edited image and its record. The record is written last
    /// and every file is renamed into place, so an interrupted store leaves
    /// no entry behind.
    pub fn store(
        &self,
        request: &GenerationRequest,
        edited: &EditedImage,
        kind: BackendKind,
        wall_time_ms: u64,
    ) -> Result<GenerationRecord, BackendError> {
        let dir = self.dir(request);
        std::fs::create_dir_all(&dir)?;
        let image_path = self.image_path(request);

        let tmp = image_path.with_extension("png.tmp");
        edited.image.save_with_format(&tmp, image::ImageFormat::Png)?;
        std::fs::rename(&tmp, &image_path)?;

        let sidecar = sidecar_path(&image_path);
        match &edited.faces {
            Some(doc) => write_atomic(&sidecar, &serde_json::to_vec_pretty(doc).expect("serializable"))?,
            None => match std::fs::remove_file(&sidecar) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            },
        }

        let record = GenerationRecord {
            fingerprint: request.fingerprint(),
            seed_id: request.seed.id.clone(),
            prompt_id: request.prompt.id.clone(),
            model_id: request.model_id.clone(),
            attempt: request.attempt,
            image_path,
            backend_kind: kind,
            wall_time_ms,
            status: GenerationStatus::Ok,
            error: None,
        };
        write_atomic(&self.meta_path(request), &serde_json::to_vec_pretty(&record).expect("serializable"))?;
        Ok(record)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
