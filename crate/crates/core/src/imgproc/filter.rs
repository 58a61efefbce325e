use super::{saturate, PreprocessConfig, RasterImage};
use crate::{Error, Result};

/// Normalized samples of a 1-D Gaussian at offsets `-r..=r`, `r = ksize / 2`.
pub fn gaussian_kernel_1d(sigma: f64, ksize: usize) -> Result<Vec<f64>> {
    if ksize.is_multiple_of(2) {
        return Err(Error::param(format!("gaussian ksize must be odd, got {ksize}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let r = (ksize / 2) as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Convolution with the normalized 2-D Gaussian (outer product of the 1-D
/// samples), edge-replicated borders.
pub fn gaussian_blur(img: &RasterImage, sigma: f64, ksize: usize) -> Result<RasterImage> {
    let k = gaussian_kernel_1d(sigma, ksize)?;
    let r = (ksize / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for (j, ky) in k.iter().enumerate() {
                for (i, kx) in k.iter().enumerate() {
                    let p = img.get_clamped(x + i as isize - r, y + j as isize - r);
                    acc += ky * kx * p as f64;
                }
            }
            out.push(saturate(acc));
        }
    }
    RasterImage::new(w, h, out)
}

/// `original + amount * (original - blurred)` per pixel, where `blurred` is the
/// 8-bit output of [`gaussian_blur`].
pub fn unsharp_mask(img: &RasterImage, cfg: &PreprocessConfig) -> Result<RasterImage> {
    cfg.validate()?;
    if cfg.unsharp_amount == 0.0 {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur(img, cfg.gaussian_sigma, cfg.gaussian_ksize)?;
    let pixels = img
        .pixels()
        .iter()
        .zip(blurred.pixels())
        .map(|(&o, &b)| {
            let o = o as f64;
            saturate(o + cfg.unsharp_amount * (o - b as f64))
        })
        .collect();
    RasterImage::new(img.width(), img.height(), pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent 2-D oracle: builds the full kernel from unnormalized samples
    /// and divides by its total.
    fn blur_oracle(img: &RasterImage, sigma: f64, ksize: usize) -> Vec<f64> {
        let r = (ksize / 2) as isize;
        let mut kernel = vec![];
        for dy in -r..=r {
            for dx in -r..=r {
                kernel.push(((-(dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = kernel.iter().sum();
        let (w, h) = (img.width() as isize, img.height() as isize);
        let mut out = vec![];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                let mut idx = 0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w - 1) as usize;
                        let sy = (y + dy).clamp(0, h - 1) as usize;
                        acc += kernel[idx] / total * img.get(sx, sy) as f64;
                        idx += 1;
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn constant_image_is_preserved() {
        let img = RasterImage::filled(9, 7, 97).unwrap();
        assert_eq!(gaussian_blur(&img, 1.3, 5).unwrap(), img);
    }

    #[test]
    fn single_pixel_is_unchanged() {
        let img = RasterImage::filled(1, 1, 201).unwrap();
        assert_eq!(gaussian_blur(&img, 3.0, 7).unwrap(), img);
    }

    #[test]
    fn impulse_row_matches_kernel_samples() {
        let img = RasterImage::new(5, 1, vec![0, 0, 255, 0, 0]).unwrap();
        let out = gaussian_blur(&img, 1.0, 3).unwrap();
        // Hand-evaluated samples: exp(-1/2) = 0.60653066, centre 1.
        let e = (-0.5f64).exp();
        let k1 = e / (1.0 + 2.0 * e);
        let k0 = 1.0 / (1.0 + 2.0 * e);
        let c = (255.0 * k0).round() as u8;
        let n = (255.0 * k1).round() as u8;
        assert_eq!((c, n), (115, 70));
        assert_eq!(out.pixels(), &[0, n, c, n, 0]);
        let oracle: Vec<u8> = blur_oracle(&img, 1.0, 3).iter().map(|v| v.round() as u8).collect();
        assert_eq!(out.pixels(), oracle.as_slice());
    }

    #[test]
    fn parameter_errors() {
        let img = RasterImage::filled(3, 3, 1).unwrap();
        assert!(gaussian_blur(&img, 1.0, 4).is_err());
        assert!(gaussian_blur(&img, 0.0, 3).is_err());
        assert!(gaussian_blur(&img, -1.0, 3).is_err());
    }

    #[test]
    fn unsharp_edge_matches_formula_oracle() {
        let img = RasterImage::from_fn(8, 4, |x, _| if x < 4 { 50 } else { 200 }).unwrap();
        let cfg = PreprocessConfig {
            unsharp_amount: 1.0,
            gaussian_sigma: 1.0,
            gaussian_ksize: 3,
            ..Default::default()
        };
        let out = unsharp_mask(&img, &cfg).unwrap();
        let blurred = blur_oracle(&img, 1.0, 3);
        for (i, (&o, b)) in img.pixels().iter().zip(&blurred).enumerate() {
            let b = b.round();
            let expected = (2.0 * o as f64 - b).round().clamp(0.0, 255.0) as u8;
            assert_eq!(out.pixels()[i], expected, "pixel {i}");
        }
        // Boundary columns: k1 = 0.274068619, so blur(50|200) = 50 + 150*k1 = 91.1.
        assert_eq!(out.get(3, 0), 9);
        assert_eq!(out.get(4, 0), 241);
        assert_eq!(out.get(0, 0), 50);
        assert_eq!(out.get(7, 0), 200);
    }

    #[test]
    fn unsharp_constant_is_unchanged() {
        let img = RasterImage::filled(6, 6, 77).unwrap();
        let cfg = PreprocessConfig {
            unsharp_amount: 3.5,
            ..Default::default()
        };
        assert_eq!(unsharp_mask(&img, &cfg).unwrap(), img);
    }

    fn arb_image() -> impl Strategy<Value = RasterImage> {
        (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h)
                .prop_map(move |px| RasterImage::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn zero_amount_is_identity(img in arb_image()) {
            let cfg = PreprocessConfig { unsharp_amount: 0.0, ..Default::default() };
            prop_assert_eq!(unsharp_mask(&img, &cfg).unwrap(), img);
        }

        #[test]
        fn blur_matches_oracle(img in arb_image(), sigma in 0.3f64..3.0) {
            let out = gaussian_blur(&img, sigma, 5).unwrap();
            let oracle = blur_oracle(&img, sigma, 5);
            for (a, b) in out.pixels().iter().zip(&oracle) {
                prop_assert!((*a as f64 - b).abs() <= 0.5 + 1e-9);
            }
        }
    }
}
