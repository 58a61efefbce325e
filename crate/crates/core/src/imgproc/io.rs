use std::path::Path;

use image::{DynamicImage, GrayImage};

use super::RasterImage;
use crate::{Error, Result};

/// `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Reads an image file, converting colour input with [`luminance`].
pub fn load_grayscale(path: impl AsRef<Path>) -> Result<RasterImage> {
    let img = image::open(path.as_ref())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        other if !other.color().has_color() => other.to_luma8().into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p[0], p[1], p[2]))
            .collect(),
    };
    RasterImage::new(w, h, pixels)
}

pub fn save_grayscale(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let buf = GrayImage::from_raw(img.width() as u32, img.height() as u32, img.pixels().to_vec())
        .ok_or_else(|| Error::param("pixel buffer does not match dimensions"))?;
    buf.save(path.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luminance_weights() {
        assert_eq!(luminance(255, 255, 255), 255);
        assert_eq!(luminance(0, 0, 0), 0);
        // 0.299 * 100 + 0.587 * 50 + 0.114 * 200 = 82.15
        assert_eq!(luminance(100, 50, 200), 82);
    }

    #[test]
    fn png_round_trip_and_colour_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(5, 4, |x, y| (x * 50 + y) as u8).unwrap();
        let p = dir.path().join("g.png");
        save_grayscale(&img, &p).unwrap();
        assert_eq!(load_grayscale(&p).unwrap(), img);

        let rgb = image::RgbImage::from_fn(2, 1, |x, _| {
            if x == 0 {
                image::Rgb([100, 50, 200])
            } else {
                image::Rgb([10, 20, 30])
            }
        });
        let p = dir.path().join("c.png");
        rgb.save(&p).unwrap();
        let g = load_grayscale(&p).unwrap();
        assert_eq!(g.pixels(), &[82, luminance(10, 20, 30)]);
    }
}
