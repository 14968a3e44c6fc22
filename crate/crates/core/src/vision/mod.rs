//! Property assessment: gender and age from a pluggable face analyzer, skin
//! gray from landmark masks and Rec.601 luma.
//!
//! Higher gray means lighter skin. With several faces in one image the age
//! is the mean over faces, the gray is pooled over the union of all face
//! masks, and the gender is kept only when every face agrees.

pub mod analyzer;
pub mod geometry;
pub mod mask;
pub mod photometry;

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analyzer::{
    analyze_faces, sidecar_path, write_sidecar, FaceAnalyzer, FaceObservation, FaceRecord, FacesDocument, HttpAnalyzer,
    HttpAnalyzerConfig, SidecarAnalyzer,
};
pub use geometry::{convex_hull, polygon_area, rasterize_polygon, Mask, Point};
pub use mask::{face_mask, face_mask_with, FaceRegion, Landmarks};
pub use photometry::{exposure_filter, hsv_value, luma, luma_milli, mean_gray, ExposureBounds, GRAY_FORMULA};

use crate::corpus::Gender;
use crate::scoring::exact;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("face analyzer unavailable: {0}")]
    AnalyzerUnavailable(String),
    #[error("malformed analyzer response: {0}")]
    AnalyzerMalformedResponse(String),
    #[error("degenerate landmarks: face area {area:.2} px^2")]
    DegenerateLandmarks { area: f64 },
    #[error("no pixels left after exposure filtering")]
    EmptyMaskAfterFilter,
    #[error("empty mask")]
    EmptyMask,
    #[error("mask {mask:?} does not match image {image:?}")]
    DimensionMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("invalid exposure bounds [{v_min}, {v_max}]")]
    InvalidBounds { v_min: f64, v_max: f64 },
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Gender label of a whole image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageGender {
    Male,
    Female,
    Inconsistent,
    NoFace,
}

impl ImageGender {
    pub fn as_gender(self) -> Option<Gender> {
        match self {
            ImageGender::Male => Some(Gender::Male),
            ImageGender::Female => Some(Gender::Female),
            _ => None,
        }
    }
}

impl From<Gender> for ImageGender {
    fn from(g: Gender) -> Self {
        match g {
            Gender::Male => ImageGender::Male,
            Gender::Female => ImageGender::Female,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageProperties {
    pub face_count: usize,
    pub gender: ImageGender,
    pub age_years: f64,
    pub mean_gray: f64,
    pub valid: bool,
}

impl ImageProperties {
    pub fn no_face() -> Self {
        Self { face_count: 0, gender: ImageGender::NoFace, age_years: 0.0, mean_gray: 0.0, valid: false }
    }
}

/// Settings for [`assess_properties`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AssessOptions {
    #[serde(default)]
    pub bounds: ExposureBounds,
    #[serde(default)]
    pub region: FaceRegion,
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, VisionError> {
    Ok(image::open(path)?.to_rgb8())
}

/// Decodes the image at `path` and assesses it.
pub fn assess_path(
    path: &Path,
    analyzer: &dyn FaceAnalyzer,
    options: AssessOptions,
) -> Result<ImageProperties, VisionError> {
    let image = load_rgb(path)?;
    assess_properties(path, &image, analyzer, options)
}

pub fn assess_properties(
    path: &Path,
    image: &RgbImage,
    analyzer: &dyn FaceAnalyzer,
    options: AssessOptions,
) -> Result<ImageProperties, VisionError> {
    let faces = analyze_faces(path, image, analyzer)?;
    Ok(properties_from_faces(image, &faces, options))
}

/// Combines per-face observations into image properties.
///
/// A face whose landmarks are degenerate or whose skin is entirely over- or
/// under-exposed contributes nothing to the gray; the image stays valid as
/// long as some face contributes.
pub fn properties_from_faces(image: &RgbImage, faces: &[FaceObservation], options: AssessOptions) -> ImageProperties {
    let Some(first) = faces.first() else {
        return ImageProperties::no_face();
    };
    let gender = if faces.iter().all(|f| f.predicted_gender == first.predicted_gender) {
        ImageGender::from(first.predicted_gender)
    } else {
        ImageGender::Inconsistent
    };
    let ages: Vec<f64> = faces.iter().map(|f| f.predicted_age).collect();
    let age_years = exact::mean_f64(&ages).expect("at least one face");

    let (w, h) = image.dimensions();
    let mut skin = Mask::new(w, h);
    for face in faces {
        let filtered = face_mask_with(&face.landmarks, w, h, options.region)
            .and_then(|m| exposure_filter(image, &m, options.bounds));
        if let Ok(m) = filtered {
            skin.union_with(&m);
        }
    }
    let gray = mean_gray(image, &skin).ok();
    ImageProperties {
        face_count: faces.len(),
        gender,
        age_years,
        mean_gray: gray.unwrap_or(0.0),
        valid: gender != ImageGender::Inconsistent && gray.is_some(),
    }
}

/// One line of the properties JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertiesRow {
    pub image: String,
    pub face_count: usize,
    pub gender: ImageGender,
    pub age_years: f64,
    pub mean_gray: f64,
    pub valid: bool,
}

impl PropertiesRow {
    pub fn new(image: impl Into<String>, p: &ImageProperties) -> Self {
        Self {
            image: image.into(),
            face_count: p.face_count,
            gender: p.gender,
            age_years: p.age_years,
            mean_gray: p.mean_gray,
            valid: p.valid,
        }
    }

    pub fn properties(&self) -> ImageProperties {
        ImageProperties {
            face_count: self.face_count,
            gender: self.gender,
            age_years: self.age_years,
            mean_gray: self.mean_gray,
            valid: self.valid,
        }
    }
}
