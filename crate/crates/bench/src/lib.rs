//! Deterministic inputs shared by the benchmarks.

use fairlens_core::corpus::{Domain, Gender};
use fairlens_core::fixtures::{render_portrait, FaceSpec};
use fairlens_core::scoring::{PairObservation, Variant};
use fairlens_core::vision::{ImageGender, ImageProperties, Landmarks};
use image::RgbImage;

/// A `size` x `size` portrait with one centred face and its landmarks.
pub fn portrait(size: u32) -> (RgbImage, Landmarks) {
    let half = f64::from(size) / 2.0;
    let spec = FaceSpec {
        cx: half,
        cy: half * 0.9,
        radius: half * 0.6,
        gender: Gender::Female,
        age: 35.0,
        skin: [160, 130, 110],
    };
    let landmarks = spec.landmarks();
    (render_portrait(size, size, &[spec]).0, landmarks)
}

fn props(age: f64, gray: f64) -> ImageProperties {
    ImageProperties { face_count: 1, gender: ImageGender::Male, age_years: age, mean_gray: gray, valid: true }
}

/// `seeds` x `words` observations spread over all domains with drifting
/// ages and grays.
pub fn observations(seeds: usize, words: usize) -> Vec<PairObservation> {
    let mut out = Vec::with_capacity(seeds * words);
    for w in 0..words {
        for s in 0..seeds {
            let k = (w * 31 + s * 7) % 97;
            out.push(PairObservation {
                seed_id: format!("s{s}"),
                prompt_id: format!("p{w}"),
                word: format!("word{w}"),
                domain: Domain::ALL[w % Domain::ALL.len()],
                model_id: "bench".into(),
                variant: Variant::Ori,
                seed: props(30.0 + (s % 40) as f64, 120.0 + (s % 50) as f64 * 0.37),
                generated: Some(props(30.0 + k as f64 * 0.41, 110.0 + k as f64 * 0.53)),
            });
        }
    }
    out
}
