//! Few-shot metric learning with a triplet Siamese ensemble.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`imgproc`]: grayscale preprocessing (background removal, automatic
//!   brightness/contrast, unsharp masking, resizing).
//! * [`datamodel`]: manifests, patient-aware splits, triplet sampling, k-fold.
//! * [`diffcore`]: a small reverse-mode differentiation engine with gradient checking.
//! * [`losses`]: pairwise distance, margin ranking, focal loss, cosine similarity.
//! * [`ensemble`]: encoder branches, 512-d heads and the fusion layer.
//! * [`training`]: Adam, plateau schedule, early stopping, cross-validation.
//! * [`fewshot`]: support sets and cosine-similarity classification.
//! * [`metrics`]: confusion matrices, averaged rates, ROC/PR curves and reports.

pub mod datamodel;
pub mod diffcore;
pub mod ensemble;
mod error;
pub mod fewshot;
pub mod imgproc;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
