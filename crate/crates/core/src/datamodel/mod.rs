//! Dataset catalogue, patient-aware partitioning and triplet sampling.

mod folds;
mod manifest;
mod triplets;

pub use folds::{kfold, patient_aware_split, Fold};
pub use manifest::{load_manifest, read_manifest, write_manifest, Manifest, SampleRecord};
pub use triplets::{read_triplets, sample_triplets, write_triplets, Triplet};
