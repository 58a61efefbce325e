use super::{saturate, RasterImage};
use crate::{Error, Result};

/// Bilinear resize to `target x target` with half-pixel-centred sampling:
/// output pixel `d` samples source coordinate `(d + 0.5) * src / target - 0.5`,
/// clamped to the image.
pub fn resize_bilinear(img: &RasterImage, target: usize) -> Result<RasterImage> {
    if target == 0 {
        return Err(Error::param("resize target must be >= 1"));
    }
    if img.width() == target && img.height() == target {
        return Ok(img.clone());
    }
    let xs = sample_positions(img.width(), target);
    let ys = sample_positions(img.height(), target);
    let mut out = Vec::with_capacity(target * target);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) as f64 * (1.0 - fx) + img.get(x1, y0) as f64 * fx;
            let bottom = img.get(x0, y1) as f64 * (1.0 - fx) + img.get(x1, y1) as f64 * fx;
            out.push(saturate(top * (1.0 - fy) + bottom * fy));
        }
    }
    RasterImage::new(target, target, out)
}

fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}
