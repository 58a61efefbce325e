#![allow(dead_code)]

use std::collections::HashMap;

use tsnet_core::datamodel::{Manifest, SampleRecord};
use tsnet_core::ensemble::EmbeddingTable;
use tsnet_core::imgproc::RasterImage;
use tsnet_core::rng::SplitMix64;

pub const CLASSES: [&str; 3] = ["disc", "rows", "columns"];

/// Noisy dark background with a bright class pattern: a disc, horizontal
/// bars or vertical bars, at a random position, size and phase.
pub fn synthetic_image(class: usize, size: usize, rng: &mut SplitMix64) -> RasterImage {
    let s = size as f64;
    let (cx, cy) = (rng.uniform(0.35, 0.65) * s, rng.uniform(0.35, 0.65) * s);
    let radius = rng.uniform(0.2, 0.3) * s;
    let period = 4 + rng.below(3);
    let phase = rng.below(period);
    let fg = rng.uniform(170.0, 230.0);
    let bg = rng.uniform(10.0, 50.0);
    let mut noise = SplitMix64::new(rng.next_u64());
    RasterImage::from_fn(size, size, |x, y| {
        let on = match class {
            0 => ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt() <= radius,
            1 => (y + phase) % period < period / 2,
            _ => (x + phase) % period < period / 2,
        };
        let base = if on { fg } else { bg };
        (base + 12.0 * noise.normal()).round().clamp(0.0, 255.0) as u8
    })
    .unwrap()
}

/// `per_class` images of each class; two images per synthetic patient.
pub fn synthetic_set(
    per_class: usize,
    size: usize,
    seed: u64,
    prefix: &str,
) -> (Manifest, HashMap<String, RasterImage>) {
    let mut rng = SplitMix64::new(seed);
    let mut records = Vec::new();
    let mut images = HashMap::new();
    for i in 0..per_class {
        for c in 0..CLASSES.len() {
            let id = format!("{prefix}{c}_{i:04}");
            images.insert(id.clone(), synthetic_image(c, size, &mut rng));
            records.push(SampleRecord {
                id: id.clone(),
                path: format!("{id}.png"),
                label: c,
                patient_id: format!("{prefix}p{c}_{}", i / 2),
            });
        }
    }
    let classes = CLASSES.iter().map(|s| s.to_string()).collect();
    (Manifest::new(classes, records).unwrap(), images)
}

/// Precomputed features where class `c` clusters around `3 * e_c`, plus an
/// EMB1-style table keyed by sample id.
pub fn separable_features(per_class: usize, dim: usize, seed: u64, prefix: &str) -> (Manifest, EmbeddingTable) {
    assert!(dim >= CLASSES.len());
    let mut rng = SplitMix64::new(seed);
    let mut table = EmbeddingTable::new(dim);
    let mut records = Vec::new();
    for c in 0..CLASSES.len() {
        for i in 0..per_class {
            let id = format!("{prefix}{c}_{i:04}");
            let v: Vec<f32> = (0..dim)
                .map(|d| (if d == c { 3.0 } else { 0.0 } + 0.3 * rng.normal()) as f32)
                .collect();
            table.insert(&id, &v).unwrap();
            records.push(SampleRecord {
                path: format!("{id}.png"),
                id,
                label: c,
                patient_id: format!("{prefix}p{c}_{}", i / 2),
            });
        }
    }
    let classes = CLASSES.iter().map(|s| s.to_string()).collect();
    (Manifest::new(classes, records).unwrap(), table)
}
