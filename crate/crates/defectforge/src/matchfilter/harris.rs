//! Harris corner detection on the structure tensor of Sobel gradients.

use serde::{Deserialize, Serialize};

use crate::imgcore::ImageBuffer;
use crate::matchfilter::FilterError;

/// Detection parameters. The response floor is calibrated for intensities
/// normalized to [0, 1]: quantization-level gradients land well below it,
/// deliberate surface texture well above.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarrisParams {
    /// Harris constant in `R = det(M) - k * trace(M)^2`.
    pub k: f64,
    /// Side of the Gaussian weighting window (odd).
    pub window: u32,
    /// Standard deviation of the window weights, in pixels.
    pub sigma: f64,
    /// Non-maximum suppression radius (Chebyshev).
    pub nms_radius: u32,
    /// Keep at most this many keypoints, strongest first.
    pub max_kp: usize,
    /// Response floor; candidates at or below it are ignored.
    pub threshold: f64,
}

impl Default for HarrisParams {
    fn default() -> Self {
        Self { k: 0.04, window: 7, sigma: 1.5, nms_radius: 2, max_kp: 512, threshold: 1e-6 }
    }
}

/// A detected corner with its response strength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
}

/// Detects Harris corners: structure tensor of Sobel gradients, Gaussian
/// window weighting, non-maximum suppression, then the strongest `max_kp`.
pub fn detect_keypoints(
    gray: &ImageBuffer,
    params: &HarrisParams,
) -> Result<Vec<Keypoint>, FilterError> {
    assert_eq!(gray.channels(), 1, "keypoint detection runs on luminance");
    assert!(params.window % 2 == 1, "window must be odd");
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if (w as u32) < params.window || (h as u32) < params.window {
        return Err(FilterError::ImageTooSmall {
            width: gray.width(),
            height: gray.height(),
            min: params.window,
        });
    }

    let lum: Vec<f64> = gray.data().iter().map(|&v| v as f64 / 255.0).collect();
    let at = |x: usize, y: usize| lum[y * w + x];

    // Sobel gradients; zero on the 1-pixel border.
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            gx[y * w + x] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[y * w + x] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }

    // Normalized Gaussian weights over the window.
    let half = (params.window / 2) as i64;
    let mut weights = Vec::with_capacity((params.window * params.window) as usize);
    let mut wsum = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * params.sigma * params.sigma)).exp();
            weights.push(g);
            wsum += g;
        }
    }
    for g in &mut weights {
        *g /= wsum;
    }

    let mut response = vec![f64::NEG_INFINITY; w * h];
    for y in half as usize..h - half as usize {
        for x in half as usize..w - half as usize {
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            let mut wi = 0;
            for dy in -half..=half {
                for dx in -half..=half {
                    let i = (y as i64 + dy) as usize * w + (x as i64 + dx) as usize;
                    let weight = weights[wi];
                    wi += 1;
                    sxx += weight * gx[i] * gx[i];
                    sxy += weight * gx[i] * gy[i];
                    syy += weight * gy[i] * gy[i];
                }
            }
            let det = sxx * syy - sxy * sxy;
            let trace = sxx + syy;
            response[y * w + x] = det - params.k * trace * trace;
        }
    }

    // Non-maximum suppression: strict maximum within the radius.
    let r = params.nms_radius as i64;
    let mut keypoints = Vec::new();
    for y in half as usize..h - half as usize {
        for x in half as usize..w - half as usize {
            let v = response[y * w + x];
            if v <= params.threshold {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    if response[ny as usize * w + nx as usize] >= v {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                keypoints.push(Keypoint { x: x as f64, y: y as f64, response: v });
            }
        }
    }

    keypoints.sort_by(|a, b| {
        b.response
            .partial_cmp(&a.response)
            .unwrap()
            .then((a.y, a.x).partial_cmp(&(b.y, b.x)).unwrap())
    });
    keypoints.truncate(params.max_kp);
    Ok(keypoints)
}
