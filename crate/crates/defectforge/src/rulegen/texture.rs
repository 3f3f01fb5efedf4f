//! Procedural texture sources for the blend engine.
//!
//! The toy benchmark ships these instead of an external texture dataset. All
//! three families are deliberately hard-edged or high-frequency, far from the
//! smooth intensity bumps of the generative mock family.

use serde::{Deserialize, Serialize};

use crate::imgcore::{ImageBuffer, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureKind {
    Stripes,
    Checker,
    Speckle,
}

impl TextureKind {
    pub const ALL: [TextureKind; 3] =
        [TextureKind::Stripes, TextureKind::Checker, TextureKind::Speckle];
}

/// Renders one texture tile. Layout parameters (period, angle, intensities)
/// are drawn from `rng`, so each call with a fresh substream gives a new tile.
pub fn procedural_texture(
    kind: TextureKind,
    width: u32,
    height: u32,
    channels: u8,
    rng: &mut Rng,
) -> ImageBuffer {
    let lo = rng.range_u32(0, 60) as u8;
    let hi = rng.range_u32(180, 256) as u8;
    let mut img = ImageBuffer::filled(width, height, channels, lo);
    match kind {
        TextureKind::Stripes => {
            let period = rng.range_u32(5, 12) as f64;
            let angle = rng.range_f64(0.0, std::f64::consts::PI);
            let (ca, sa) = (angle.cos(), angle.sin());
            for y in 0..height {
                for x in 0..width {
                    let t = (x as f64 * ca + y as f64 * sa) / period;
                    if (t.floor() as i64).rem_euclid(2) == 0 {
                        for c in 0..channels {
                            img.set(x, y, c, hi);
                        }
                    }
                }
            }
        }
        TextureKind::Checker => {
            let cell = rng.range_u32(4, 10);
            let ox = rng.range_u32(0, cell);
            let oy = rng.range_u32(0, cell);
            for y in 0..height {
                for x in 0..width {
                    if ((x + ox) / cell + (y + oy) / cell) % 2 == 0 {
                        for c in 0..channels {
                            img.set(x, y, c, hi);
                        }
                    }
                }
            }
        }
        TextureKind::Speckle => {
            for y in 0..height {
                for x in 0..width {
                    let v = rng.range_u32(lo as u32, hi as u32 + 1) as u8;
                    for c in 0..channels {
                        img.set(x, y, c, v);
                    }
                }
            }
        }
    }
    img
}
