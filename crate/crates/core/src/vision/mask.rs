//! Skin-region masks from 68-point facial landmarks (iBUG-68 indexing).

use serde::{Deserialize, Serialize};

use super::geometry::{convex_hull, polygon_area, rasterize_polygon, Mask, Point};
use super::VisionError;

pub const LANDMARK_COUNT: usize = 68;
pub const JAW: std::ops::RangeInclusive<usize> = 0..=16;
pub const RIGHT_BROW: std::ops::RangeInclusive<usize> = 17..=21;
pub const LEFT_BROW: std::ops::RangeInclusive<usize> = 22..=26;
pub const LEFT_EYE: std::ops::RangeInclusive<usize> = 36..=41;
pub const RIGHT_EYE: std::ops::RangeInclusive<usize> = 42..=47;
pub const OUTER_MOUTH: std::ops::RangeInclusive<usize> = 48..=59;

/// Smallest face outline area, in square pixels, accepted as a face.
pub const MIN_FACE_AREA: f64 = 16.0;

/// Outline used before removing eyes and mouth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceRegion {
    /// Convex hull of all 68 points.
    #[default]
    ConvexHull,
    /// Jawline 0..=16 closed over the brows 26..=17.
    JawlineBrow,
}

/// Exactly 68 landmark points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Landmarks(Vec<Point>);

impl Landmarks {
    pub fn new(points: Vec<Point>) -> Result<Self, VisionError> {
        if points.len() != LANDMARK_COUNT {
            return Err(VisionError::AnalyzerMalformedResponse(format!(
                "expected {LANDMARK_COUNT} landmarks, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(VisionError::AnalyzerMalformedResponse("non-finite landmark".into()));
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    pub fn range(&self, r: std::ops::RangeInclusive<usize>) -> Vec<Point> {
        self.0[r].to_vec()
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounding_box(&self) -> (f64, f64, f64, f64) {
        self.0
            .iter()
            .fold((f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY), |(x0, y0, x1, y1), p| {
                (x0.min(p.x), y0.min(p.y), x1.max(p.x), y1.max(p.y))
            })
    }

    pub fn box_area(&self) -> f64 {
        let (x0, y0, x1, y1) = self.bounding_box();
        (x1 - x0) * (y1 - y0)
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.0.iter().all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x < f64::from(width) && p.y < f64::from(height))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self(self.0.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|p| Point::new(p.x * s, p.y * s)).collect())
    }

    pub fn outline(&self, region: FaceRegion) -> Vec<Point> {
        match region {
            FaceRegion::ConvexHull => convex_hull(&self.0),
            FaceRegion::JawlineBrow => {
                let mut poly = self.range(JAW);
                poly.extend(self.0[17..=26].iter().rev());
                poly
            }
        }
    }
}

impl TryFrom<Vec<[f64; 2]>> for Landmarks {
    type Error = VisionError;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self, Self::Error> {
        Landmarks::new(v.into_iter().map(Point::from).collect())
    }
}

impl From<Landmarks> for Vec<[f64; 2]> {
    fn from(l: Landmarks) -> Self {
        l.0.into_iter().map(|p| [p.x, p.y]).collect()
    }
}

/// Face outline minus both eyes and the outer mouth.
pub fn face_mask(landmarks: &Landmarks, width: u32, height: u32) -> Result<Mask, VisionError> {
    face_mask_with(landmarks, width, height, FaceRegion::ConvexHull)
}

pub fn face_mask_with(landmarks: &Landmarks, width: u32, height: u32, region: FaceRegion) -> Result<Mask, VisionError> {
    let outline = landmarks.outline(region);
    let area = polygon_area(&outline);
    if area < MIN_FACE_AREA {
        return Err(VisionError::DegenerateLandmarks { area });
    }
    let mut mask = rasterize_polygon(&outline, width, height);
    for part in [LEFT_EYE, RIGHT_EYE, OUTER_MOUTH] {
        mask.subtract(&rasterize_polygon(&landmarks.range(part), width, height));
    }
    Ok(mask)
}
