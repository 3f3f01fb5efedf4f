//! Rule-based defect synthesis engines.
//!
//! These produce the large cheap pre-training datasets: Perlin-mask texture
//! blending, cut-paste, masked Gaussian corruption, and Poisson
//! harmonization. Every engine is a pure function of its inputs and seed, and
//! leaves pixels outside the mask byte-identical to the source normal image.

mod perlin;
mod poisson;
mod texture;

pub use perlin::{
    fractal_perlin, perlin_fade, perlin_noise_2d, threshold_mask, GradientGrid, PerlinParams,
    ScalarField,
};
pub use poisson::{default_max_iters, poisson_blend, solve_plane, PlaneSolution};
pub use texture::{procedural_texture, TextureKind};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imgcore::{DefectMask, ImageBuffer, Rng};

#[derive(Debug, Error)]
pub enum RulegenError {
    #[error("image {width}x{height} smaller than required minimum {min}")]
    DimensionTooSmall { width: u32, height: u32, min: u32 },
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (u32, u32), got: (u32, u32) },
    #[error("patch cannot fit: image {width}x{height}, patch_frac {patch_frac}")]
    PatchDoesNotFit { width: u32, height: u32, patch_frac: f64 },
    #[error("mask touches the image border")]
    MaskTouchesBorder,
    #[error("solver did not converge: residual {residual}")]
    DidNotConverge { sample: Box<SyntheticSample>, residual: f64 },
    #[error("could not draw a nonempty mask after {attempts} attempts")]
    EmptyMask { attempts: u32 },
}

/// Identifies the producing engine and the hash of its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub params_hash: String,
}

impl Provenance {
    pub fn rule(source: &str, params_hash: String) -> Self {
        Self { source: source.to_string(), params_hash }
    }

    pub fn generated(prompt_id: &str, params_hash: String) -> Self {
        Self { source: format!("gen:{prompt_id}"), params_hash }
    }
}

/// Short stable hash of a parameter struct, for provenance records.
pub fn params_hash<T: Serialize>(params: &T) -> String {
    let json = serde_json::to_vec(params).expect("parameters serialize");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

/// The atom of every dataset: a defect image, its mask, who made it, and the
/// per-item seed it was made from.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: ImageBuffer,
    pub mask: DefectMask,
    pub provenance: Provenance,
    pub seed: u64,
}

impl SyntheticSample {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

fn check_shapes(
    normal: &ImageBuffer,
    other: Option<&ImageBuffer>,
    mask: &DefectMask,
) -> Result<(), RulegenError> {
    let expected = (normal.width(), normal.height());
    if let Some(img) = other {
        if !normal.same_shape(img) {
            return Err(RulegenError::DimensionMismatch {
                expected,
                got: (img.width(), img.height()),
            });
        }
    }
    if mask.width() != normal.width() || mask.height() != normal.height() {
        return Err(RulegenError::DimensionMismatch {
            expected,
            got: (mask.width(), mask.height()),
        });
    }
    Ok(())
}

/// Blends `texture` over `normal` inside the mask at opacity `beta`:
/// `round(beta * texture + (1 - beta) * normal)` per masked pixel, the
/// original value elsewhere.
pub fn perlin_texture_blend(
    normal: &ImageBuffer,
    texture: &ImageBuffer,
    mask: &DefectMask,
    beta: f64,
) -> Result<SyntheticSample, RulegenError> {
    assert!((0.0..=1.0).contains(&beta), "beta out of [0,1]");
    check_shapes(normal, Some(texture), mask)?;
    let mut out = normal.clone();
    let channels = normal.channels();
    for y in 0..normal.height() {
        for x in 0..normal.width() {
            if mask.get(x, y) {
                for c in 0..channels {
                    let blended = beta * texture.get(x, y, c) as f64
                        + (1.0 - beta) * normal.get(x, y, c) as f64;
                    out.set(x, y, c, blended.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    Ok(SyntheticSample {
        image: out,
        mask: mask.clone(),
        provenance: Provenance::rule("rule:perlin", params_hash(&beta)),
        seed: 0,
    })
}

/// Draws a Perlin mask and blends a texture through it, redrawing from fresh
/// substreams up to 8 times if the thresholded mask comes up empty.
pub fn synthesize_perlin(
    normal: &ImageBuffer,
    texture: &ImageBuffer,
    params: &PerlinParams,
    rng: &Rng,
) -> Result<SyntheticSample, RulegenError> {
    const MAX_ATTEMPTS: u32 = 8;
    for attempt in 0..MAX_ATTEMPTS {
        let field_rng = rng.substream(attempt as u64);
        let field = fractal_perlin(normal.width(), normal.height(), params, &field_rng)?;
        let mask = threshold_mask(&field, params.threshold);
        if !mask.is_empty() {
            let mut sample = perlin_texture_blend(normal, texture, &mask, params.beta)?;
            sample.provenance = Provenance::rule("rule:perlin", params_hash(params));
            return Ok(sample);
        }
    }
    Err(RulegenError::EmptyMask { attempts: MAX_ATTEMPTS })
}

/// Copies a random rectangle of the image onto another random position.
///
/// Draw order from `rng`: patch width, patch height, source x, source y,
/// destination x, destination y — all uniform. The mask marks the pasted
/// destination rectangle, defect or not (a self-paste is still labeled).
pub fn cut_paste(
    normal: &ImageBuffer,
    rng: &mut Rng,
    patch_frac: f64,
) -> Result<SyntheticSample, RulegenError> {
    assert!(patch_frac > 0.0 && patch_frac <= 0.5, "patch_frac out of (0, 0.5]");
    let (w, h) = (normal.width(), normal.height());
    let max_w = (w as f64 * patch_frac).floor() as u32;
    let max_h = (h as f64 * patch_frac).floor() as u32;
    if max_w < 1 || max_h < 1 {
        return Err(RulegenError::PatchDoesNotFit { width: w, height: h, patch_frac });
    }
    let pw = rng.range_u32(1, max_w + 1);
    let ph = rng.range_u32(1, max_h + 1);
    let sx = rng.range_u32(0, w - pw + 1);
    let sy = rng.range_u32(0, h - ph + 1);
    let dx = rng.range_u32(0, w - pw + 1);
    let dy = rng.range_u32(0, h - ph + 1);

    let mut out = normal.clone();
    let mut mask = DefectMask::new(w, h);
    for oy in 0..ph {
        for ox in 0..pw {
            for c in 0..normal.channels() {
                out.set(dx + ox, dy + oy, c, normal.get(sx + ox, sy + oy, c));
            }
            mask.set(dx + ox, dy + oy, true);
        }
    }
    Ok(SyntheticSample {
        image: out,
        mask,
        provenance: Provenance::rule("rule:cutpaste", params_hash(&patch_frac)),
        seed: 0,
    })
}

/// Adds zero-mean Gaussian noise with standard deviation `sigma` to every
/// masked pixel, clamping once at the end.
pub fn gaussian_corrupt(
    normal: &ImageBuffer,
    mask: &DefectMask,
    sigma: f64,
    rng: &mut Rng,
) -> Result<SyntheticSample, RulegenError> {
    assert!(sigma >= 0.0, "sigma must be nonnegative");
    check_shapes(normal, None, mask)?;
    let mut out = normal.clone();
    for y in 0..normal.height() {
        for x in 0..normal.width() {
            if mask.get(x, y) {
                for c in 0..normal.channels() {
                    let noisy = normal.get(x, y, c) as f64 + rng.normal(sigma);
                    out.set(x, y, c, noisy.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
    }
    Ok(SyntheticSample {
        image: out,
        mask: mask.clone(),
        provenance: Provenance::rule("rule:gaussian", params_hash(&sigma)),
        seed: 0,
    })
}
