//! Structural-consistency quality gate for generated defect candidates.
//!
//! A candidate is compared against its source normal image by keypoint
//! matching. Candidates that match almost everywhere are failed edits
//! (no anomaly was introduced); candidates that barely match have lost the
//! object structure entirely. Only the middle band proceeds to datasets.
//!
//! The matcher is a classical Harris + binary-descriptor pipeline standing in
//! for a learned matching service; only the match count contract matters, so
//! a learned matcher can replace this module behind [`filter_decision`].

mod brief;
mod harris;

pub use brief::{
    compute_descriptors, match_descriptors, Descriptor, DescriptorParams, MatchParams,
    SamplingPattern, DESCRIPTOR_BITS, DESCRIPTOR_BYTES,
};
pub use harris::{detect_keypoints, HarrisParams, Keypoint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgcore::{to_grayscale, ImageBuffer};

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("image {width}x{height} smaller than the {min}-pixel window")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
    #[error("dimension mismatch: normal {normal:?} vs candidate {candidate:?}")]
    DimensionMismatch { normal: (u32, u32), candidate: (u32, u32) },
    #[error(
        "too few keypoints to gate: normal {k_normal}, candidate {k_candidate}, need {min_keypoints}"
    )]
    DegenerateImage { k_normal: usize, k_candidate: usize, min_keypoints: usize },
}

/// The three filter outcomes of the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Candidate is essentially identical to the normal image: the edit
    /// failed to introduce anything.
    NoAnomaly,
    /// Structure preserved, a localized change present: usable defect.
    Desired,
    /// Structure destroyed: meaningless output.
    Irrelevant,
}

/// Everything the gate needs; all fields are config keys.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct FilterParams {
    pub harris: HarrisParams,
    pub descriptor: DescriptorParams,
    pub matcher: MatchParams,
    pub thresholds: FilterThresholds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterThresholds {
    /// Match ratio at or below this is Irrelevant.
    pub tau_low: f64,
    /// Match ratio above this is NoAnomaly.
    pub tau_high: f64,
    /// Images yielding fewer keypoints than this cannot be gated.
    pub min_keypoints: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self { tau_low: 0.05, tau_high: 0.90, min_keypoints: 8 }
    }
}

/// Outcome of gating one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    /// Keypoints with descriptors on the normal image.
    pub k_normal: usize,
    /// Keypoints with descriptors on the candidate image.
    pub k_candidate: usize,
    /// Accepted descriptor matches.
    pub m: usize,
    /// `m / max(1, min(k_normal, k_candidate))`.
    pub ratio: f64,
    pub decision: Decision,
    pub tau_low: f64,
    pub tau_high: f64,
}

/// Runs the full gate: luminance, keypoints, descriptors, mutual matching,
/// and the trichotomy decision on the match ratio.
pub fn filter_decision(
    normal: &ImageBuffer,
    candidate: &ImageBuffer,
    params: &FilterParams,
) -> Result<FilterReport, FilterError> {
    if normal.width() != candidate.width() || normal.height() != candidate.height() {
        return Err(FilterError::DimensionMismatch {
            normal: (normal.width(), normal.height()),
            candidate: (candidate.width(), candidate.height()),
        });
    }
    let gray_normal = to_grayscale(normal);
    let gray_candidate = to_grayscale(candidate);

    let pattern = SamplingPattern::new(&params.descriptor);
    let kp_normal = detect_keypoints(&gray_normal, &params.harris)?;
    let kp_candidate = detect_keypoints(&gray_candidate, &params.harris)?;
    let (desc_normal, kept_normal, _) = compute_descriptors(&gray_normal, &kp_normal, &pattern);
    let (desc_candidate, kept_candidate, _) =
        compute_descriptors(&gray_candidate, &kp_candidate, &pattern);

    let k_normal = kept_normal.len();
    let k_candidate = kept_candidate.len();
    let min_k = k_normal.min(k_candidate);
    if min_k < params.thresholds.min_keypoints {
        return Err(FilterError::DegenerateImage {
            k_normal,
            k_candidate,
            min_keypoints: params.thresholds.min_keypoints,
        });
    }

    let matches = match_descriptors(&desc_normal, &desc_candidate, &params.matcher);
    let m = matches.len();
    let ratio = m as f64 / min_k.max(1) as f64;
    let decision = if ratio > params.thresholds.tau_high {
        Decision::NoAnomaly
    } else if ratio <= params.thresholds.tau_low {
        Decision::Irrelevant
    } else {
        Decision::Desired
    };
    Ok(FilterReport {
        k_normal,
        k_candidate,
        m,
        ratio,
        decision,
        tau_low: params.thresholds.tau_low,
        tau_high: params.thresholds.tau_high,
    })
}
