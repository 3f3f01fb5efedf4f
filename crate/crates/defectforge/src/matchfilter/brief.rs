//! Binary patch descriptors and mutual-nearest-neighbor matching.
//!
//! Each descriptor is 256 intensity comparisons between seeded point pairs in
//! a 31x31 patch, taken after 3x3 box smoothing. Comparisons are invariant to
//! global brightness shifts.

use serde::{Deserialize, Serialize};

use crate::imgcore::{ImageBuffer, Rng};
use crate::matchfilter::Keypoint;

pub const DESCRIPTOR_BITS: usize = 256;
pub const DESCRIPTOR_BYTES: usize = DESCRIPTOR_BITS / 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorParams {
    /// Side of the sampling patch (odd).
    pub patch: u32,
    /// Seed of the shared pair-sampling pattern.
    pub pattern_seed: u64,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self { patch: 31, pattern_seed: 0x42524945 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchParams {
    /// Lowe ratio bound: best distance must be below `ratio * second_best`.
    pub ratio: f64,
    /// Maximum Hamming distance for an accepted match.
    pub max_dist: u32,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { ratio: 0.8, max_dist: 64 }
    }
}

/// 256-bit binary descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Descriptor {
    bits: [u8; DESCRIPTOR_BYTES],
}

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    #[cfg(test)]
    pub fn from_bytes(bits: [u8; DESCRIPTOR_BYTES]) -> Self {
        Self { bits }
    }
}

/// The seeded point-pair layout shared by every descriptor in a run.
#[derive(Debug, Clone)]
pub struct SamplingPattern {
    patch: u32,
    pairs: Vec<(i32, i32, i32, i32)>,
}

impl SamplingPattern {
    /// Pairs are drawn from an isotropic Gaussian with sigma = patch/5,
    /// clamped to the patch.
    pub fn new(params: &DescriptorParams) -> Self {
        assert!(params.patch % 2 == 1, "patch must be odd");
        let half = (params.patch / 2) as i32;
        let sigma = params.patch as f64 / 5.0;
        let mut rng = Rng::new(params.pattern_seed);
        let draw = |rng: &mut Rng| -> i32 {
            (rng.normal(sigma).round() as i32).clamp(-half, half)
        };
        let pairs = (0..DESCRIPTOR_BITS)
            .map(|_| {
                let px = draw(&mut rng);
                let py = draw(&mut rng);
                let qx = draw(&mut rng);
                let qy = draw(&mut rng);
                (px, py, qx, qy)
            })
            .collect();
        Self { patch: params.patch, pairs }
    }

    pub fn patch(&self) -> u32 {
        self.patch
    }
}

/// 3x3 box smoothing (integer mean); the border keeps its original values.
fn box_smooth(gray: &ImageBuffer) -> Vec<u16> {
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.data();
    let mut out: Vec<u16> = data.iter().map(|&v| v as u16).collect();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut sum = 0u32;
            for dy in 0..3 {
                for dx in 0..3 {
                    sum += data[(y + dy - 1) * w + (x + dx - 1)] as u32;
                }
            }
            out[y * w + x] = (sum / 9) as u16;
        }
    }
    out
}

/// Computes descriptors for the keypoints whose full patch fits inside the
/// image. Returns the descriptors, the surviving keypoints in order, and the
/// number of boundary keypoints dropped.
pub fn compute_descriptors(
    gray: &ImageBuffer,
    keypoints: &[Keypoint],
    pattern: &SamplingPattern,
) -> (Vec<Descriptor>, Vec<Keypoint>, usize) {
    assert_eq!(gray.channels(), 1);
    let (w, h) = (gray.width() as i32, gray.height() as i32);
    let half = (pattern.patch / 2) as i32;
    let smoothed = box_smooth(gray);

    let mut descriptors = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = 0usize;
    for kp in keypoints {
        let cx = kp.x.round() as i32;
        let cy = kp.y.round() as i32;
        if cx - half < 0 || cy - half < 0 || cx + half >= w || cy + half >= h {
            dropped += 1;
            continue;
        }
        let mut bits = [0u8; DESCRIPTOR_BYTES];
        for (i, &(px, py, qx, qy)) in pattern.pairs.iter().enumerate() {
            let p = smoothed[((cy + py) * w + cx + px) as usize];
            let q = smoothed[((cy + qy) * w + cx + qx) as usize];
            if p < q {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        descriptors.push(Descriptor { bits });
        kept.push(*kp);
    }
    (descriptors, kept, dropped)
}

/// Mutual nearest neighbors under Hamming distance, with the Lowe ratio test
/// and an absolute distance bound. Each index appears at most once per side.
pub fn match_descriptors(
    a: &[Descriptor],
    b: &[Descriptor],
    params: &MatchParams,
) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }

    // Nearest and second-nearest in `b` for each element of `a`; ties go to
    // the lower index.
    let nearest_two = |query: &Descriptor, set: &[Descriptor]| -> (usize, u32, u32) {
        let mut best = usize::MAX;
        let mut d1 = u32::MAX;
        let mut d2 = u32::MAX;
        for (j, cand) in set.iter().enumerate() {
            let d = query.hamming(cand);
            if d < d1 {
                d2 = d1;
                d1 = d;
                best = j;
            } else if d < d2 {
                d2 = d;
            }
        }
        (best, d1, d2)
    };

    let backward: Vec<usize> = b.iter().map(|q| nearest_two(q, a).0).collect();

    let mut matches = Vec::new();
    for (i, query) in a.iter().enumerate() {
        let (j, d1, d2) = nearest_two(query, b);
        if d1 > params.max_dist {
            continue;
        }
        // With a single candidate there is no second neighbor to compare.
        if b.len() > 1 && (d1 as f64) >= params.ratio * (d2 as f64).max(f64::EPSILON) {
            continue;
        }
        if backward[j] == i {
            matches.push((i, j));
        }
    }
    matches
}
