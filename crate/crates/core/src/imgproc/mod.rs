//! Deterministic 8-bit grayscale preprocessing.
//!
//! Every function here is pure: the same image and configuration always give a
//! bit-identical result. Rounding is half-away-from-zero followed by clamping
//! to `[0, 255]` wherever a real value becomes a pixel.

mod background;
mod contrast;
mod filter;
mod io;
mod resize;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use background::{kmeans_threshold, remove_background, BackgroundRemoval, CropBox};
pub use contrast::{auto_brightness_contrast, ContrastAdjustment};
pub use filter::{gaussian_blur, gaussian_kernel_1d, unsharp_mask};
pub use io::{load_grayscale, luminance, save_grayscale};
pub use resize::resize_bilinear;

/// Row-major 8-bit single-channel image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::param(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with coordinates clamped to the image (edge replication).
    #[inline]
    pub(crate) fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn min_max(&self) -> (u8, u8) {
        self.pixels
            .iter()
            .fold((u8::MAX, u8::MIN), |(lo, hi), &p| (lo.min(p), hi.max(p)))
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Converts a real value to a pixel: round half away from zero, then clamp.
#[inline]
pub(crate) fn saturate(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub unsharp_amount: f64,
    pub gaussian_sigma: f64,
    pub gaussian_ksize: usize,
    pub clip_percent: f64,
    pub morph_ksize: usize,
    pub erode_iters: usize,
    pub dilate_iters: usize,
    pub target_size: usize,
    /// Rescale washed-out slices (mean above 220) to mean 128 before thresholding.
    pub renormalize_washed_out: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            unsharp_amount: 1.0,
            gaussian_sigma: 1.0,
            gaussian_ksize: 5,
            clip_percent: 0.01,
            morph_ksize: 3,
            erode_iters: 2,
            dilate_iters: 2,
            target_size: 224,
            renormalize_washed_out: false,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.unsharp_amount >= 0.0 && self.unsharp_amount.is_finite()) {
            return Err(Error::param("unsharp_amount must be finite and >= 0"));
        }
        if !(self.gaussian_sigma > 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(Error::param("gaussian_sigma must be finite and > 0"));
        }
        if self.gaussian_ksize < 3 || self.gaussian_ksize.is_multiple_of(2) {
            return Err(Error::param("gaussian_ksize must be odd and >= 3"));
        }
        if !(0.0..0.5).contains(&self.clip_percent) {
            return Err(Error::param("clip_percent must lie in [0, 0.5)"));
        }
        if self.morph_ksize.is_multiple_of(2) {
            return Err(Error::param("morph_ksize must be odd and >= 1"));
        }
        if self.target_size == 0 {
            return Err(Error::param("target_size must be >= 1"));
        }
        Ok(())
    }
}

/// Degenerate inputs that a stage passed through instead of failing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocessWarning {
    EmptyForeground,
    ZeroDynamicRange,
}

impl std::fmt::Display for PreprocessWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PreprocessWarning::EmptyForeground => "empty_foreground",
            PreprocessWarning::ZeroDynamicRange => "zero_dynamic_range",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub image: RasterImage,
    pub crop: CropBox,
    pub alpha: f64,
    pub beta: f64,
    pub warnings: Vec<PreprocessWarning>,
}

/// Full pipeline: background removal, brightness/contrast, sharpening, resize.
pub fn preprocess(img: &RasterImage, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    cfg.validate()?;
    let mut warnings = Vec::new();

    let bg = remove_background(img, cfg)?;
    warnings.extend(bg.warning);

    let adj = auto_brightness_contrast(&bg.image, cfg.clip_percent)?;
    warnings.extend(adj.warning);

    let sharp = unsharp_mask(&adj.image, cfg)?;
    let image = resize_bilinear(&sharp, cfg.target_size)?;

    Ok(Preprocessed {
        image,
        crop: bg.crop,
        alpha: adj.alpha,
        beta: adj.beta,
        warnings,
    })
}
