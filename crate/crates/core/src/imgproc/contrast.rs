use super::{saturate, PreprocessWarning, RasterImage};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastAdjustment {
    pub image: RasterImage,
    /// Gain.
    pub alpha: f64,
    /// Bias.
    pub beta: f64,
    pub minimum_gray: u8,
    pub maximum_gray: u8,
    pub warning: Option<PreprocessWarning>,
}

/// Histogram-clipped linear stretch `g = alpha * f + beta` onto `[0, 255]`.
///
/// `minimum_gray` is the smallest intensity whose cumulative fraction exceeds
/// `clip_percent`, `maximum_gray` the largest whose upper-tail fraction does.
/// Then `alpha = 255 / (maximum_gray - minimum_gray)` and
/// `beta = -minimum_gray * alpha`, applied with saturation. When the clipped
/// range collapses the image is returned unchanged with `alpha = 1, beta = 0`.
pub fn auto_brightness_contrast(img: &RasterImage, clip_percent: f64) -> Result<ContrastAdjustment> {
    if !(0.0..0.5).contains(&clip_percent) {
        return Err(Error::param(format!(
            "clip_percent must lie in [0, 0.5), got {clip_percent}"
        )));
    }
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let total = img.pixels().len() as f64;

    let mut acc = 0u64;
    let mut minimum_gray = 255u8;
    for (v, &c) in hist.iter().enumerate() {
        acc += c;
        if acc as f64 / total > clip_percent {
            minimum_gray = v as u8;
            break;
        }
    }
    acc = 0;
    let mut maximum_gray = 0u8;
    for (v, &c) in hist.iter().enumerate().rev() {
        acc += c;
        if acc as f64 / total > clip_percent {
            maximum_gray = v as u8;
            break;
        }
    }

    if maximum_gray <= minimum_gray {
        return Ok(ContrastAdjustment {
            image: img.clone(),
            alpha: 1.0,
            beta: 0.0,
            minimum_gray,
            maximum_gray,
            warning: Some(PreprocessWarning::ZeroDynamicRange),
        });
    }
    let alpha = 255.0 / (maximum_gray as f64 - minimum_gray as f64);
    let beta = -(minimum_gray as f64) * alpha;
    let pixels = img
        .pixels()
        .iter()
        .map(|&f| saturate(alpha * f as f64 + beta))
        .collect();
    Ok(ContrastAdjustment {
        image: RasterImage::new(img.width(), img.height(), pixels)?,
        alpha,
        beta,
        minimum_gray,
        maximum_gray,
        warning: None,
    })
}
