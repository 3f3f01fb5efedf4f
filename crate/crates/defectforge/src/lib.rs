//! Synthetic-defect data engineering for industrial anomaly detection.
//!
//! The crate covers the full loop from normal images to a trained detector:
//!
//! - [`imgcore`]: 8-bit image buffers, deterministic PNG I/O, and a splittable
//!   seeded random source used by every randomized step.
//! - [`rulegen`]: rule-based defect engines (Perlin-mask texture blending,
//!   cut-paste, Gaussian corruption, Poisson harmonization).
//! - [`genclient`]: HTTP client for an external text-guided image-editing
//!   service, plus a deterministic mock service for tests and offline runs.
//! - [`matchfilter`]: the structural-consistency gate that accepts or rejects
//!   generated candidates by keypoint match count.
//! - [`detector`]: a patch-wise reconstruction autoencoder, its trainer, and
//!   AUROC evaluation.
//! - [`pipeline`]: dataset manifests, the generate→filter→persist loop, the
//!   five training strategies, the toy benchmark, and reporting.

pub mod detector;
pub mod genclient;
pub mod imgcore;
pub mod matchfilter;
pub mod pipeline;
pub mod rulegen;
