use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{saturate, PreprocessConfig, PreprocessWarning, RasterImage};
use crate::Result;

/// Axis-aligned crop rectangle in source pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropBox {
    pub fn full(img: &RasterImage) -> Self {
        Self {
            x: 0,
            y: 0,
            width: img.width(),
            height: img.height(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundRemoval {
    /// Masked image cropped to `crop`.
    pub image: RasterImage,
    /// Full-size binary mask, 255 = foreground.
    pub mask: RasterImage,
    pub crop: CropBox,
    pub warning: Option<PreprocessWarning>,
}

/// Threshold between the two intensity clusters found by 1-D 2-means.
///
/// Centroids start at the minimum and maximum intensity; a pixel equidistant
/// from both goes to the lower cluster. Iteration stops when no assignment
/// changes. The result is the floor of the centroid midpoint, so foreground is
/// `pixel > threshold`. A constant image yields its own intensity.
pub fn kmeans_threshold(img: &RasterImage) -> u8 {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let (lo, hi) = img.min_max();
    let (mut c0, mut c1) = (lo as f64, hi as f64);
    // Centroids stay ordered, so the low cluster is every present intensity
    // up to some cut; iterate until the cut stops moving.
    let mut cut = None;
    loop {
        let next = (0..256usize)
            .rev()
            .find(|&v| hist[v] > 0 && (v as f64 - c0).abs() <= (v as f64 - c1).abs());
        if cut.is_some() && next == cut {
            break;
        }
        cut = next;
        let Some(cut) = cut else { break };
        let (mut n0, mut s0, mut n1, mut s1) = (0u64, 0f64, 0u64, 0f64);
        for (v, &count) in hist.iter().enumerate() {
            if v <= cut {
                n0 += count;
                s0 += count as f64 * v as f64;
            } else {
                n1 += count;
                s1 += count as f64 * v as f64;
            }
        }
        if n0 > 0 {
            c0 = s0 / n0 as f64;
        }
        if n1 > 0 {
            c1 = s1 / n1 as f64;
        }
    }
    ((c0 + c1) / 2.0).floor() as u8
}

type Mask = Vec<bool>;

fn threshold_mask(img: &RasterImage, t: u8) -> Mask {
    img.pixels().iter().map(|&p| p > t).collect()
}

/// Binary erosion (`want = true`) or dilation (`want = false`) with a square
/// element; out-of-image taps replicate the nearest edge pixel.
fn morph(mask: &Mask, w: usize, h: usize, ksize: usize, erode: bool) -> Mask {
    let r = (ksize / 2) as isize;
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        mask[y * w + x]
    };
    let mut out = vec![false; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut all = true;
            let mut any = false;
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = at(x + dx, y + dy);
                    all &= v;
                    any |= v;
                }
            }
            out[y as usize * w + x as usize] = if erode { all } else { any };
        }
    }
    out
}

/// 4-connected flood from `seeds` over cells where `passable` is true.
fn flood(passable: &Mask, w: usize, h: usize, seeds: impl IntoIterator<Item = usize>) -> Mask {
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for s in seeds {
        if passable[s] && !seen[s] {
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let mut visit = |j: usize| {
            if passable[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
    seen
}

/// Largest 4-connected true component; ties go to the one met first in raster order.
fn largest_component(mask: &Mask, w: usize, h: usize) -> Mask {
    let mut labelled = vec![false; w * h];
    let mut best: Option<Mask> = None;
    let mut best_size = 0;
    for start in 0..w * h {
        if !mask[start] || labelled[start] {
            continue;
        }
        let comp = flood(mask, w, h, [start]);
        let size = comp.iter().filter(|&&c| c).count();
        for (l, &c) in labelled.iter_mut().zip(&comp) {
            *l |= c;
        }
        if size > best_size {
            best_size = size;
            best = Some(comp);
        }
    }
    best.unwrap_or_else(|| vec![false; w * h])
}

/// Sets every background pixel that cannot reach the border to foreground.
fn fill_holes(mask: &Mask, w: usize, h: usize) -> Mask {
    let background: Mask = mask.iter().map(|&m| !m).collect();
    let border = (0..w)
        .flat_map(|x| [x, (h - 1) * w + x])
        .chain((0..h).flat_map(|y| [y * w, y * w + w - 1]));
    let outside = flood(&background, w, h, border);
    outside.iter().map(|&o| !o).collect()
}

fn renormalize(img: &RasterImage) -> Result<RasterImage> {
    let mean = img.mean();
    if mean <= 220.0 {
        return Ok(img.clone());
    }
    let scale = 128.0 / mean;
    let pixels = img.pixels().iter().map(|&p| saturate(p as f64 * scale)).collect();
    RasterImage::new(img.width(), img.height(), pixels)
}

/// Separates the body from background and crops to it.
///
/// Stages: k-means threshold mask, erosion then dilation, largest 4-connected
/// component, intersection with a fresh threshold mask, hole filling, then
/// masking and cropping to the mask's bounding box. An empty foreground
/// returns the input untouched with a full mask and a warning.
pub fn remove_background(img: &RasterImage, cfg: &PreprocessConfig) -> Result<BackgroundRemoval> {
    cfg.validate()?;
    let (w, h) = (img.width(), img.height());
    let work = if cfg.renormalize_washed_out {
        renormalize(img)?
    } else {
        img.clone()
    };
    let t = kmeans_threshold(&work);

    let mut mask = threshold_mask(&work, t);
    for _ in 0..cfg.erode_iters {
        mask = morph(&mask, w, h, cfg.morph_ksize, true);
    }
    for _ in 0..cfg.dilate_iters {
        mask = morph(&mask, w, h, cfg.morph_ksize, false);
    }
    let component = largest_component(&mask, w, h);
    if !component.iter().any(|&c| c) {
        return Ok(BackgroundRemoval {
            image: img.clone(),
            mask: RasterImage::filled(w, h, 255)?,
            crop: CropBox::full(img),
            warning: Some(PreprocessWarning::EmptyForeground),
        });
    }

    let second = threshold_mask(&work, t);
    let both: Mask = component.iter().zip(&second).map(|(&a, &b)| a && b).collect();
    let filled = fill_holes(&both, w, h);

    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for (i, _) in filled.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % w, i / w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        // The intersection emptied a non-empty component only if the
        // dilation created it from nothing; treat like an empty foreground.
        return Ok(BackgroundRemoval {
            image: img.clone(),
            mask: RasterImage::filled(w, h, 255)?,
            crop: CropBox::full(img),
            warning: Some(PreprocessWarning::EmptyForeground),
        });
    }
    let crop = CropBox {
        x: x0,
        y: y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    };
    let cropped = RasterImage::from_fn(crop.width, crop.height, |cx, cy| {
        let (x, y) = (cx + crop.x, cy + crop.y);
        if filled[y * w + x] {
            work.get(x, y)
        } else {
            0
        }
    })?;
    let mask = RasterImage::new(w, h, filled.iter().map(|&m| if m { 255 } else { 0 }).collect())?;
    Ok(BackgroundRemoval {
        image: cropped,
        mask,
        crop,
        warning: None,
    })
}
