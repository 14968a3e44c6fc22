//! Exposure filtering and skin-gray measurement.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::geometry::Mask;
use super::VisionError;

/// Name of the gray reduction, recorded alongside assessment output.
pub const GRAY_FORMULA: &str = "rec601_luma: 0.299 R + 0.587 G + 0.114 B";

/// Accepted range of the HSV value channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds")]
pub struct ExposureBounds {
    v_min: f64,
    v_max: f64,
}

#[derive(Deserialize)]
struct RawBounds {
    v_min: f64,
    v_max: f64,
}

impl TryFrom<RawBounds> for ExposureBounds {
    type Error = VisionError;

    fn try_from(r: RawBounds) -> Result<Self, Self::Error> {
        ExposureBounds::new(r.v_min, r.v_max)
    }
}

impl ExposureBounds {
    pub fn new(v_min: f64, v_max: f64) -> Result<Self, VisionError> {
        if !(0.0..=1.0).contains(&v_min) || !(0.0..=1.0).contains(&v_max) || v_min >= v_max {
            return Err(VisionError::InvalidBounds { v_min, v_max });
        }
        Ok(Self { v_min, v_max })
    }

    pub fn v_min(&self) -> f64 {
        self.v_min
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.v_min && v <= self.v_max
    }
}

impl Default for ExposureBounds {
    fn default() -> Self {
        Self { v_min: 0.10, v_max: 0.95 }
    }
}

/// HSV value channel, `max(R, G, B) / 255`.
#[inline]
pub fn hsv_value(px: &Rgb<u8>) -> f64 {
    f64::from(px.0[0].max(px.0[1]).max(px.0[2])) / 255.0
}

/// Rec.601 luma scaled by 1000, exact in integers.
#[inline]
pub fn luma_milli(px: &Rgb<u8>) -> u32 {
    299 * u32::from(px.0[0]) + 587 * u32::from(px.0[1]) + 114 * u32::from(px.0[2])
}

/// Rec.601 luma, correctly rounded.
#[inline]
pub fn luma(px: &Rgb<u8>) -> f64 {
    f64::from(luma_milli(px)) / 1000.0
}

fn check_dims(image: &RgbImage, mask: &Mask) -> Result<(), VisionError> {
    if image.dimensions() != mask.dimensions() {
        return Err(VisionError::DimensionMismatch { image: image.dimensions(), mask: mask.dimensions() });
    }
    Ok(())
}

/// Keeps the masked pixels whose HSV value lies within `bounds`.
pub fn exposure_filter(image: &RgbImage, mask: &Mask, bounds: ExposureBounds) -> Result<Mask, VisionError> {
    check_dims(image, mask)?;
    let mut out = mask.clone();
    for (x, y) in mask.iter_set() {
        if !bounds.contains(hsv_value(image.get_pixel(x, y))) {
            out.set(x, y, false);
        }
    }
    if out.is_empty() {
        return Err(VisionError::EmptyMaskAfterFilter);
    }
    Ok(out)
}

/// Mean luma over the masked pixels.
///
/// The scaled luma is summed in integers and divided once, so the result is
/// the correctly rounded exact mean whatever the pixel order.
pub fn mean_gray(image: &RgbImage, mask: &Mask) -> Result<f64, VisionError> {
    check_dims(image, mask)?;
    let mut sum = 0u64;
    let mut n = 0u64;
    for (x, y) in mask.iter_set() {
        sum += u64::from(luma_milli(image.get_pixel(x, y)));
        n += 1;
    }
    if n == 0 {
        return Err(VisionError::EmptyMask);
    }
    // both operands stay below 2^53 for any image that fits in memory
    Ok(sum as f64 / (n * 1000) as f64)
}
