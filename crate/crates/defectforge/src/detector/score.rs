//! Patch extraction, anomaly scoring, and AUROC.

use serde::{Deserialize, Serialize};

use crate::detector::{AutoencoderModel, DetectorError};
use crate::imgcore::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Anomalous,
}

/// Per-image scoring result; `score` is the mean of `score_map`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub label: Label,
    pub score: f64,
    pub score_map: Vec<f64>,
}

/// Row-major grid of patches, each normalized to [0, 1] reals. The grid has
/// `floor((W - patch)/stride) + 1` columns and the analogous row count.
pub fn extract_patches(
    img: &ImageBuffer,
    patch: u32,
    stride: u32,
) -> Result<Vec<Vec<f64>>, DetectorError> {
    assert_eq!(img.channels(), 1, "patches are extracted from luminance");
    assert!(stride >= 1);
    if patch > img.width() || patch > img.height() {
        return Err(DetectorError::PatchTooLarge {
            patch,
            width: img.width(),
            height: img.height(),
        });
    }
    let cols = (img.width() - patch) / stride + 1;
    let rows = (img.height() - patch) / stride + 1;
    let mut patches = Vec::with_capacity((cols * rows) as usize);
    for gy in 0..rows {
        for gx in 0..cols {
            let mut values = Vec::with_capacity((patch * patch) as usize);
            for dy in 0..patch {
                for dx in 0..patch {
                    values.push(img.get(gx * stride + dx, gy * stride + dy, 0) as f64 / 255.0);
                }
            }
            patches.push(values);
        }
    }
    Ok(patches)
}

/// Scores an image: per-patch mean squared reconstruction error, and their
/// mean as the image score.
pub fn anomaly_score(
    model: &AutoencoderModel,
    img: &ImageBuffer,
    sample_id: &str,
    label: Label,
    patch: u32,
    stride: u32,
) -> Result<ScoreRecord, DetectorError> {
    let d = model.input_dim();
    if (patch * patch) as usize != d {
        return Err(DetectorError::DimensionMismatch { expected: d, got: (patch * patch) as usize });
    }
    let patches = extract_patches(img, patch, stride)?;
    let mut score_map = Vec::with_capacity(patches.len());
    for p in &patches {
        let reconstruction = model.forward(p)?;
        let mse = reconstruction
            .iter()
            .zip(p)
            .map(|(r, v)| (r - v) * (r - v))
            .sum::<f64>()
            / d as f64;
        score_map.push(mse);
    }
    let score = score_map.iter().sum::<f64>() / score_map.len() as f64;
    Ok(ScoreRecord { sample_id: sample_id.to_string(), label, score, score_map })
}

/// AUROC by rank statistics: the probability that a random anomalous score
/// exceeds a random normal one, ties at half weight. Computed with averaged
/// ranks, which equals exhaustive pair counting.
pub fn compute_auroc(records: &[ScoreRecord]) -> Result<f64, DetectorError> {
    let n_anom = records.iter().filter(|r| r.label == Label::Anomalous).count();
    let n_norm = records.len() - n_anom;
    if n_anom == 0 || n_norm == 0 {
        return Err(DetectorError::OneClassOnly { normals: n_norm, anomalies: n_anom });
    }

    let mut indexed: Vec<(f64, bool)> = records
        .iter()
        .map(|r| (r.score, r.label == Label::Anomalous))
        .collect();
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    // Average ranks over tie groups (1-based ranks).
    let mut rank_sum_anomalous = 0.0f64;
    let mut i = 0usize;
    while i < indexed.len() {
        let mut j = i;
        while j + 1 < indexed.len() && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for item in &indexed[i..=j] {
            if item.1 {
                rank_sum_anomalous += avg_rank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_anomalous - (n_anom * (n_anom + 1)) as f64 / 2.0;
    Ok(u / (n_anom as f64 * n_norm as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::Rng;

    fn records(normals: &[f64], anomalies: &[f64]) -> Vec<ScoreRecord> {
        let mut out = Vec::new();
        for (i, &s) in normals.iter().enumerate() {
            out.push(ScoreRecord {
                sample_id: format!("n{i}"),
                label: Label::Normal,
                score: s,
                score_map: vec![s],
            });
        }
        for (i, &s) in anomalies.iter().enumerate() {
            out.push(ScoreRecord {
                sample_id: format!("a{i}"),
                label: Label::Anomalous,
                score: s,
                score_map: vec![s],
            });
        }
        out
    }

    /// Exhaustive O(n^2) pair counting; the oracle for the rank version.
    fn brute_force_auroc(records: &[ScoreRecord]) -> f64 {
        let normals: Vec<f64> = records
            .iter()
            .filter(|r| r.label == Label::Normal)
            .map(|r| r.score)
            .collect();
        let anomalies: Vec<f64> = records
            .iter()
            .filter(|r| r.label == Label::Anomalous)
            .map(|r| r.score)
            .collect();
        let mut wins = 0.0;
        for &a in &anomalies {
            for &n in &normals {
                if a > n {
                    wins += 1.0;
                } else if a == n {
                    wins += 0.5;
                }
            }
        }
        wins / (normals.len() * anomalies.len()) as f64
    }

    #[test]
    fn patch_grid_counts() {
        let img = ImageBuffer::filled(16, 16, 1, 0);
        assert_eq!(extract_patches(&img, 16, 16).unwrap().len(), 1);
        let img = ImageBuffer::filled(64, 64, 1, 0);
        assert_eq!(extract_patches(&img, 16, 16).unwrap().len(), 16);
        assert_eq!(extract_patches(&img, 16, 8).unwrap().len(), 49);
    }

    #[test]
    fn patches_are_row_major_and_normalized() {
        let mut img = ImageBuffer::filled(4, 4, 1, 0);
        img.set(2, 0, 0, 255); // lands in the second patch of the first row
        let patches = extract_patches(&img, 2, 2).unwrap();
        assert_eq!(patches.len(), 4);
        assert_eq!(patches[1][0], 1.0);
        assert_eq!(patches[0][0], 0.0);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let img = ImageBuffer::filled(8, 8, 1, 0);
        assert!(matches!(
            extract_patches(&img, 9, 1),
            Err(DetectorError::PatchTooLarge { .. })
        ));
    }

    #[test]
    fn perfect_reconstruction_scores_zero() {
        let model = crate::detector::tests::identity_model(16);
        let mut img = ImageBuffer::filled(8, 8, 1, 40);
        img.set(3, 3, 0, 250);
        let record = anomaly_score(&model, &img, "x", Label::Normal, 4, 4).unwrap();
        assert_eq!(record.score, 0.0);
        assert!(record.score_map.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn scoring_is_deterministic_and_score_is_mean() {
        let model = AutoencoderModel::new(&[16, 8, 16], &mut Rng::new(1));
        let mut rng = Rng::new(2);
        let mut img = ImageBuffer::filled(12, 12, 1, 0);
        for v in img.data_mut() {
            *v = rng.range_u32(0, 256) as u8;
        }
        let a = anomaly_score(&model, &img, "s", Label::Normal, 4, 4).unwrap();
        let b = anomaly_score(&model, &img, "s", Label::Normal, 4, 4).unwrap();
        assert_eq!(a, b);
        let mean = a.score_map.iter().sum::<f64>() / a.score_map.len() as f64;
        assert!((a.score - mean).abs() < 1e-15);
    }

    #[test]
    fn auroc_hand_case() {
        let recs = records(&[0.1, 0.2, 0.3], &[0.25, 0.4]);
        let auroc = compute_auroc(&recs).unwrap();
        assert!((auroc - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_extremes() {
        let separated = records(&[0.1, 0.2], &[0.9, 0.8]);
        assert_eq!(compute_auroc(&separated).unwrap(), 1.0);
        let ties = records(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(compute_auroc(&ties).unwrap(), 0.5);
    }

    #[test]
    fn auroc_needs_both_classes() {
        let recs = records(&[0.1, 0.2], &[]);
        assert!(matches!(
            compute_auroc(&recs),
            Err(DetectorError::OneClassOnly { .. })
        ));
    }

    #[test]
    fn auroc_equals_brute_force_on_100_random_sets() {
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let n_norm = rng.range_u32(1, 101) as usize;
            let n_anom = rng.range_u32(1, 101) as usize;
            // Coarse quantization forces plenty of ties.
            let normals: Vec<f64> =
                (0..n_norm).map(|_| (rng.range_u32(0, 20) as f64) / 10.0).collect();
            let anomalies: Vec<f64> =
                (0..n_anom).map(|_| (rng.range_u32(0, 20) as f64) / 10.0).collect();
            let recs = records(&normals, &anomalies);
            let fast = compute_auroc(&recs).unwrap();
            let slow = brute_force_auroc(&recs);
            assert!((fast - slow).abs() < 1e-12, "fast {fast} vs slow {slow}");
        }
    }

    #[test]
    fn auroc_is_invariant_under_monotone_transforms() {
        let mut rng = Rng::new(5);
        let normals: Vec<f64> = (0..50).map(|_| rng.unit_f64()).collect();
        let anomalies: Vec<f64> = (0..50).map(|_| rng.unit_f64() + 0.3).collect();
        let base = compute_auroc(&records(&normals, &anomalies)).unwrap();
        for transform in [|x: f64| x.exp(), |x: f64| 3.0 * x + 7.0, |x: f64| x.powi(3)] {
            let tn: Vec<f64> = normals.iter().map(|&v| transform(v)).collect();
            let ta: Vec<f64> = anomalies.iter().map(|&v| transform(v)).collect();
            let t = compute_auroc(&records(&tn, &ta)).unwrap();
            assert!((base - t).abs() < 1e-12);
        }
    }
}
