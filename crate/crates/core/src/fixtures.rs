//! Synthetic portraits with known landmarks.
//!
//! Each face is a flat skin-coloured convex region with dark eyes and a red
//! mouth, drawn from the same landmark polygons the skin mask uses, so the
//! skin gray of a rendered face equals the luma of its skin colour. Faces
//! come with a sidecar document for [`crate::vision::SidecarAnalyzer`].

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use thiserror::Error;

use crate::corpus::{
    write_seed_manifest, AgeBand, CorpusError, Coverage, DemographicGroup, Gender, Race, SeedImage, SeedSet,
};
use crate::vision::mask::{LEFT_EYE, OUTER_MOUTH, RIGHT_EYE};
use crate::vision::{convex_hull, rasterize_polygon, write_sidecar, FaceObservation, FacesDocument, Landmarks, Point};

pub const BACKGROUND: [u8; 3] = [250, 250, 250];
pub const EYE: [u8; 3] = [30, 30, 30];
pub const MOUTH: [u8; 3] = [150, 50, 60];
pub const PORTRAIT_SIZE: u32 = 96;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// 68 landmarks of the template face centred at `(cx, cy)`; `r` is the half
/// width of the jaw.
pub fn template_landmarks(cx: f64, cy: f64, r: f64) -> Landmarks {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(68);
    for i in 0..17 {
        let t = PI * f64::from(i) / 16.0;
        pts.push((-t.cos(), 0.1 + 1.1 * t.sin()));
    }
    for (x0, x1) in [(-0.85, -0.25), (0.25, 0.85)] {
        for i in 0..5 {
            let t = f64::from(i) / 4.0;
            pts.push((x0 + (x1 - x0) * t, -0.45 - 0.1 * (PI * t).sin()));
        }
    }
    for y in [-0.35, -0.2, -0.05, 0.1] {
        pts.push((0.0, y));
    }
    for i in 0..5 {
        pts.push((-0.2 + 0.1 * f64::from(i), 0.25));
    }
    for ex in [-0.45, 0.45] {
        for k in 0..6 {
            let a = PI - PI * f64::from(k) / 3.0;
            pts.push((ex + 0.22 * a.cos(), -0.15 - 0.1 * a.sin()));
        }
    }
    for (n, a, b) in [(12, 0.4, 0.15), (8, 0.25, 0.06)] {
        for k in 0..n {
            let phi = PI - 2.0 * PI * f64::from(k) / f64::from(n);
            pts.push((a * phi.cos(), 0.6 - b * phi.sin()));
        }
    }
    debug_assert_eq!(pts.len(), 68);
    Landmarks::new(pts.into_iter().map(|(x, y)| Point::new(cx + r * x, cy + r * y)).collect())
        .expect("template has 68 finite points")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSpec {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub gender: Gender,
    pub age: f64,
    pub skin: [u8; 3],
}

impl FaceSpec {
    /// A face centred in a [`PORTRAIT_SIZE`] square.
    pub fn centered(gender: Gender, age: f64, skin: [u8; 3]) -> Self {
        let c = f64::from(PORTRAIT_SIZE) / 2.0;
        Self { cx: c, cy: c - 4.0, radius: 30.0, gender, age, skin }
    }

    pub fn landmarks(&self) -> Landmarks {
        template_landmarks(self.cx, self.cy, self.radius)
    }
}

pub fn skin_tone(race: Race) -> [u8; 3] {
    match race {
        Race::White => [200, 170, 150],
        Race::Black => [110, 80, 65],
        Race::EastAsian => [190, 160, 130],
    }
}

pub fn band_age(band: AgeBand) -> f64 {
    match band {
        AgeBand::YoungAdult => 25.0,
        AgeBand::MiddleAged => 45.0,
        AgeBand::Elderly => 70.0,
    }
}

fn fill(img: &mut RgbImage, poly: &[Point], color: [u8; 3]) {
    let (w, h) = img.dimensions();
    for (x, y) in rasterize_polygon(poly, w, h).iter_set() {
        img.put_pixel(x, y, Rgb(color));
    }
}

/// Draws `faces` on a plain background and returns the image with the
/// matching face document.
pub fn render_portrait(width: u32, height: u32, faces: &[FaceSpec]) -> (RgbImage, FacesDocument) {
    let mut img = RgbImage::from_pixel(width, height, Rgb(BACKGROUND));
    let mut observations = Vec::with_capacity(faces.len());
    for face in faces {
        let lm = face.landmarks();
        fill(&mut img, &convex_hull(lm.points()), face.skin);
        fill(&mut img, &lm.range(LEFT_EYE), EYE);
        fill(&mut img, &lm.range(RIGHT_EYE), EYE);
        fill(&mut img, &lm.range(OUTER_MOUTH), MOUTH);
        observations.push(FaceObservation {
            landmarks: lm,
            predicted_gender: face.gender,
            predicted_age: face.age,
            detector_confidence: 1.0,
        });
    }
    (img, FacesDocument::from_observations(&observations))
}

/// Renders and saves a PNG portrait with its sidecar.
pub fn write_portrait(path: &Path, width: u32, height: u32, faces: &[FaceSpec]) -> Result<(), FixtureError> {
    let (img, doc) = render_portrait(width, height, faces);
    img.save(path)?;
    write_sidecar(path, &doc)?;
    Ok(())
}

/// Renders `per_group` single-face portraits for every group into `dir` and
/// writes `dir/seeds.csv`. Returns the manifest path.
pub fn write_fixture_seeds(dir: &Path, groups: &[DemographicGroup], per_group: usize) -> Result<PathBuf, FixtureError> {
    std::fs::create_dir_all(dir)?;
    let mut seeds = Vec::new();
    for group in groups {
        for k in 0..per_group {
            let id = format!("{}_{}_{}_{k}", group.race, group.gender, group.age_band);
            let path = dir.join(format!("{id}.png"));
            let face = FaceSpec::centered(group.gender, band_age(group.age_band), skin_tone(group.race));
            write_portrait(&path, PORTRAIT_SIZE, PORTRAIT_SIZE, &[face])?;
            seeds.push(SeedImage { id, image_path: path, group: *group, source_tag: "synthetic".into() });
        }
    }
    let coverage = if groups.len() == DemographicGroup::COUNT { Coverage::Full } else { Coverage::Partial };
    let set = SeedSet::with_coverage(seeds, coverage)?;
    let manifest = dir.join("seeds.csv");
    write_seed_manifest(&set, &manifest)?;
    Ok(manifest)
}
