//! Face analyzers: something that turns an image into landmark, gender and
//! age observations.
//!
//! Two implementations ship: [`SidecarAnalyzer`] reads `<stem>.faces.json`
//! next to the image (deterministic, used by fixtures and tests), and
//! [`HttpAnalyzer`] posts the image to a service speaking the same JSON.

use std::path::{Path, PathBuf};
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::mask::Landmarks;
use super::VisionError;
use crate::corpus::Gender;
use crate::http;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub landmarks: Landmarks,
    pub predicted_gender: Gender,
    pub predicted_age: f64,
    pub detector_confidence: f64,
}

/// Wire form of one detected face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub landmarks: Vec<[f64; 2]>,
    pub gender: String,
    pub age: f64,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

/// Wire form of an analyzer response and of sidecar files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FacesDocument {
    pub faces: Vec<FaceRecord>,
}

impl FacesDocument {
    pub fn from_observations(obs: &[FaceObservation]) -> Self {
        Self {
            faces: obs
                .iter()
                .map(|o| FaceRecord {
                    landmarks: o.landmarks.clone().into(),
                    gender: match o.predicted_gender {
                        Gender::Male => "Male".into(),
                        Gender::Female => "Female".into(),
                    },
                    age: o.predicted_age,
                    confidence: o.detector_confidence,
                })
                .collect(),
        }
    }

    /// Validates the document against an image of the given size.
    pub fn into_observations(self, width: u32, height: u32) -> Result<Vec<FaceObservation>, VisionError> {
        let bad = VisionError::AnalyzerMalformedResponse;
        self.faces
            .into_iter()
            .map(|f| {
                let landmarks = Landmarks::try_from(f.landmarks)?;
                if !landmarks.within(width, height) {
                    return Err(bad(format!("landmark outside {width}x{height} image")));
                }
                let predicted_gender = f.gender.parse::<Gender>().map_err(|e| bad(e.to_string()))?;
                if !(f.age >= 0.0 && f.age.is_finite()) {
                    return Err(bad(format!("invalid age {}", f.age)));
                }
                if !(0.0..=1.0).contains(&f.confidence) {
                    return Err(bad(format!("confidence {} outside [0,1]", f.confidence)));
                }
                Ok(FaceObservation {
                    landmarks,
                    predicted_gender,
                    predicted_age: f.age,
                    detector_confidence: f.confidence,
                })
            })
            .collect()
    }
}

pub trait FaceAnalyzer: Send + Sync {
    /// Raw detections for the image at `path`, whose decoded pixels are `image`.
    fn detect(&self, path: &Path, image: &RgbImage) -> Result<Vec<FaceObservation>, VisionError>;
}

/// Runs `analyzer` and orders faces by descending landmark bounding-box area.
pub fn analyze_faces(
    path: &Path,
    image: &RgbImage,
    analyzer: &dyn FaceAnalyzer,
) -> Result<Vec<FaceObservation>, VisionError> {
    let mut faces = analyzer.detect(path, image)?;
    faces.sort_by(|a, b| b.landmarks.box_area().total_cmp(&a.landmarks.box_area()));
    Ok(faces)
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("faces.json")
}

/// Reads faces from the sidecar file; a missing sidecar means no face.
#[derive(Debug, Clone, Copy, Default)]
pub struct SidecarAnalyzer;

impl FaceAnalyzer for SidecarAnalyzer {
    fn detect(&self, path: &Path, image: &RgbImage) -> Result<Vec<FaceObservation>, VisionError> {
        let sidecar = sidecar_path(path);
        let bytes = match std::fs::read(&sidecar) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(VisionError::AnalyzerUnavailable(format!("{}: {e}", sidecar.display()))),
        };
        let doc: FacesDocument = serde_json::from_slice(&bytes)
            .map_err(|e| VisionError::AnalyzerMalformedResponse(format!("{}: {e}", sidecar.display())))?;
        doc.into_observations(image.width(), image.height())
    }
}

pub fn write_sidecar(image_path: &Path, doc: &FacesDocument) -> std::io::Result<()> {
    std::fs::write(sidecar_path(image_path), serde_json::to_vec_pretty(doc)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpAnalyzerConfig {
    pub url: String,
    /// Environment variable holding the API key, if the service needs one.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
    #[serde(default)]
    pub auth_prefix: String,
    #[serde(default = "default_image_field")]
    pub image_field: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_auth_header() -> String {
    "Authorization".into()
}

fn default_image_field() -> String {
    "image".into()
}

fn default_timeout() -> u64 {
    60
}

/// Posts the image as multipart and parses a [`FacesDocument`] reply.
pub struct HttpAnalyzer {
    config: HttpAnalyzerConfig,
    agent: ureq::Agent,
}

impl HttpAnalyzer {
    pub fn new(config: HttpAnalyzerConfig) -> Self {
        let agent = http::agent(Duration::from_secs(config.timeout_secs));
        Self { config, agent }
    }
}

impl FaceAnalyzer for HttpAnalyzer {
    fn detect(&self, path: &Path, image: &RgbImage) -> Result<Vec<FaceObservation>, VisionError> {
        let unavailable = |m: String| VisionError::AnalyzerUnavailable(m);
        let bytes = std::fs::read(path)?;
        let filename = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let (content_type, body) = http::multipart(
            &[http::Part::File {
                name: &self.config.image_field,
                filename: &filename,
                content_type: "application/octet-stream",
                bytes: &bytes,
            }],
            "fairlens-analyzer-boundary",
        );
        let mut req = self.agent.post(&self.config.url).header("Content-Type", &content_type);
        if let Some(var) = &self.config.auth_env_var {
            let key = std::env::var(var).map_err(|_| unavailable(format!("environment variable {var} not set")))?;
            req = req.header(&self.config.auth_header, &format!("{}{key}", self.config.auth_prefix));
        }
        let mut resp = req.send(&body[..]).map_err(|e| unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let payload = resp
            .body_mut()
            .with_config()
            .limit(http::MAX_BODY_BYTES)
            .read_to_vec()
            .map_err(|e| unavailable(e.to_string()))?;
        if status != 200 {
            return Err(unavailable(format!("status {status}: {}", http::excerpt(&payload))));
        }
        let doc: FacesDocument =
            serde_json::from_slice(&payload).map_err(|e| VisionError::AnalyzerMalformedResponse(e.to_string()))?;
        doc.into_observations(image.width(), image.height())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(offset: f64, size: f64, gender: &str, age: f64) -> FaceRecord {
        let landmarks = (0..68)
            .map(|i| {
                let t = i as f64 / 68.0 * std::f64::consts::TAU;
                [offset + size * (1.0 + t.cos()) / 2.0, offset + size * (1.0 + t.sin()) / 2.0]
            })
            .collect();
        FaceRecord { landmarks, gender: gender.into(), age, confidence: 0.9 }
    }

    #[test]
    fn stub_echoes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        let img = RgbImage::new(64, 64);
        img.save(&path).unwrap();
        write_sidecar(&path, &FacesDocument { faces: vec![record(5.0, 40.0, "Male", 30.0)] }).unwrap();
        let faces = analyze_faces(&path, &img, &SidecarAnalyzer).unwrap();
        assert_eq!(faces.len(), 1);
        assert_eq!(faces[0].predicted_gender, Gender::Male);
        assert_eq!(faces[0].predicted_age, 30.0);
    }

    #[test]
    fn no_sidecar_means_no_face() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blank.png");
        let img = RgbImage::from_pixel(16, 16, image::Rgb([255, 255, 255]));
        img.save(&path).unwrap();
        assert!(analyze_faces(&path, &img, &SidecarAnalyzer).unwrap().is_empty());
    }

    #[test]
    fn larger_face_first() {
        // boxes of side 20 (area 400) and 40 (area 1600)
        let doc = FacesDocument { faces: vec![record(2.0, 20.0, "Female", 20.0), record(30.0, 40.0, "Male", 50.0)] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.png");
        let img = RgbImage::new(80, 80);
        write_sidecar(&path, &doc).unwrap();
        let faces = analyze_faces(&path, &img, &SidecarAnalyzer).unwrap();
        assert_eq!(faces.len(), 2);
        assert_eq!(faces[0].predicted_gender, Gender::Male);
        assert!((faces[0].landmarks.box_area() - 1600.0).abs() < 1.0);
    }

    #[test]
    fn out_of_bounds_landmarks_rejected() {
        let doc = FacesDocument { faces: vec![record(50.0, 40.0, "Male", 30.0)] };
        assert!(matches!(doc.into_observations(64, 64), Err(VisionError::AnalyzerMalformedResponse(_))));
        let doc = FacesDocument { faces: vec![record(0.0, 10.0, "robot", 30.0)] };
        assert!(doc.into_observations(64, 64).is_err());
        let doc = FacesDocument { faces: vec![record(0.0, 10.0, "Female", -1.0)] };
        assert!(doc.into_observations(64, 64).is_err());
    }
}
