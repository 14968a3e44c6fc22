//! A backend that injects known demographic shifts, used as ground truth.
//!
//! The output is the seed image with `gray_shift` added to every channel of
//! the skin pixels (rounded, clamped to `0..=255`) and a face document in
//! which every face's age moves by `age_shift_years` and, with probability
//! `gender_flip_prob`, every face's gender is flipped. The flip is drawn
//! once per image from a generator keyed by the seed bytes, the word, the
//! profile seed and the attempt.

use std::collections::BTreeMap;

use image::Rgb;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, BackendKind, EditedImage, GenerationRequest, ImageBackend};
use crate::sampling::RunRng;
use crate::vision::{face_mask, sidecar_path, FacesDocument, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordRule {
    pub gender_flip_prob: f64,
    pub age_shift_years: f64,
    pub gray_shift: f64,
}

impl WordRule {
    pub fn is_identity(&self) -> bool {
        self.gender_flip_prob == 0.0 && self.age_shift_years == 0.0 && self.gray_shift == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SyntheticBiasProfile {
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub rules: BTreeMap<String, WordRule>,
}

impl SyntheticBiasProfile {
    pub fn validate(&self) -> Result<(), BackendError> {
        for (word, r) in &self.rules {
            if !(0.0..=1.0).contains(&r.gender_flip_prob) {
                return Err(BackendError::InvalidConfig(format!(
                    "gender_flip_prob {} for {word:?} outside [0, 1]",
                    r.gender_flip_prob
                )));
            }
            if !r.age_shift_years.is_finite() || !r.gray_shift.is_finite() {
                return Err(BackendError::InvalidConfig(format!("non-finite shift for {word:?}")));
            }
        }
        Ok(())
    }

    pub fn rule(&self, word: &str) -> WordRule {
        self.rules.get(word).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    profile: SyntheticBiasProfile,
}

impl SyntheticBackend {
    pub fn new(profile: SyntheticBiasProfile) -> Result<Self, BackendError> {
        profile.validate()?;
        Ok(Self { profile })
    }

    fn rng(&self, seed_bytes: &[u8], word: &str, attempt: u32) -> RunRng {
        let mut h = Sha256::new();
        h.update(self.profile.rng_seed.to_le_bytes());
        h.update(Sha256::digest(seed_bytes));
        h.update((word.len() as u64).to_le_bytes());
        h.update(word.as_bytes());
        h.update(attempt.to_le_bytes());
        RunRng::from_seed(h.finalize().into())
    }
}

impl ImageBackend for SyntheticBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::SyntheticBias
    }

    fn edit(&self, request: &GenerationRequest) -> Result<EditedImage, BackendError> {
        let bytes = std::fs::read(&request.seed.image_path)?;
        let mut image = image::load_from_memory(&bytes)?.to_rgb8();
        let (w, h) = image.dimensions();
        let rule = self.profile.rule(&request.prompt.word);
        let flip = self.rng(&bytes, &request.prompt.word, request.attempt).random_bool(rule.gender_flip_prob);

        let faces =
            match std::fs::read(sidecar_path(&request.seed.image_path)) {
                Ok(b) => Some(serde_json::from_slice::<FacesDocument>(&b).map_err(|e| {
                    BackendError::MalformedResponse(format!("seed sidecar for {}: {e}", request.seed.id))
                })?),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                Err(e) => return Err(e.into()),
            };
        let Some(doc) = faces else {
            return Ok(EditedImage { image, faces: None });
        };
        let observations = doc.clone().into_observations(w, h)?;

        let shift = rule.gray_shift.round();
        if shift != 0.0 {
            let mut skin = Mask::new(w, h);
            for face in &observations {
                if let Ok(m) = face_mask(&face.landmarks, w, h) {
                    skin.union_with(&m);
                }
            }
            for (x, y) in skin.iter_set() {
                let px = image.get_pixel_mut(x, y);
                *px = Rgb(px.0.map(|c| (f64::from(c) + shift).clamp(0.0, 255.0) as u8));
            }
        }

        let mut out = doc;
        for f in &mut out.faces {
            f.age = (f.age + rule.age_shift_years).max(0.0);
            if flip {
                f.gender = match f.gender.to_ascii_lowercase().as_str() {
                    "male" => "Female".into(),
                    "female" => "Male".into(),
                    _ => f.gender.clone(),
                };
            }
        }
        Ok(EditedImage { image, faces: Some(out) })
    }
}
