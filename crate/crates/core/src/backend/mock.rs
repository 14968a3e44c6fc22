//! In-process test backend.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{BackendError, BackendKind, EditedImage, GenerationRequest, ImageBackend};
use crate::vision::{sidecar_path, FacesDocument};

type Script = dyn Fn(&GenerationRequest) -> Result<EditedImage, BackendError> + Send + Sync;

/// Echoes the seed (with its sidecar) or follows a script, counting calls.
pub struct MockBackend {
    script: Option<Box<Script>>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn echo() -> Self {
        Self { script: None, calls: AtomicUsize::new(0) }
    }

    pub fn scripted(
        f: impl Fn(&GenerationRequest) -> Result<EditedImage, BackendError> + Send + Sync + 'static,
    ) -> Self {
        Self { script: Some(Box::new(f)), calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

/// The seed image and its face document, unchanged.
pub fn echo_seed(request: &GenerationRequest) -> Result<EditedImage, BackendError> {
    let image = image::open(&request.seed.image_path)?.to_rgb8();
    let faces = match std::fs::read(sidecar_path(&request.seed.image_path)) {
        Ok(b) => Some(
            serde_json::from_slice::<FacesDocument>(&b)
                .map_err(|e| BackendError::MalformedResponse(format!("seed sidecar: {e}")))?,
        ),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };
    Ok(EditedImage { image, faces })
}

impl ImageBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn edit(&self, request: &GenerationRequest) -> Result<EditedImage, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.script {
            Some(f) => f(request),
            None => echo_seed(request),
        }
    }
}
