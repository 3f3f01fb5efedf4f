//! Lattice gradient noise used to shape defect masks.
//!
//! A thresholded fractal Perlin field gives the organic blob masks that the
//! texture-blend engine fills. The field is a pure function of the supplied
//! [`Rng`] key: per-octave gradient lattices come from substreams of it, so
//! the same rng always yields the same field.

use serde::{Deserialize, Serialize};

use crate::imgcore::{DefectMask, Rng};
use crate::rulegen::RulegenError;

/// Parameters for the fractal Perlin mask family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerlinParams {
    /// Pixels per lattice cell at the base octave (>= 2).
    pub cell_size: u32,
    /// Number of octaves, each doubling the frequency.
    pub octaves: u32,
    /// Amplitude decay per octave, in (0, 1].
    pub persistence: f64,
    /// Mask cut: pixels with field value above this become defect bits.
    pub threshold: f64,
    /// Blend opacity for the texture engine, in [0, 1].
    pub beta: f64,
}

impl Default for PerlinParams {
    fn default() -> Self {
        Self { cell_size: 16, octaves: 3, persistence: 0.5, threshold: 0.2, beta: 0.5 }
    }
}

/// Real-valued grid; fractal fields are normalized so `|value| <= 1`.
#[derive(Debug, Clone)]
pub struct ScalarField {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width as usize * height as usize);
        Self { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Quintic smoothstep `6t^5 - 15t^4 + 10t^3`. Monotone on [0, 1] with zero
/// first and second derivatives at both endpoints.
pub fn perlin_fade(t: f64) -> f64 {
    assert!((0.0..=1.0).contains(&t), "fade input out of [0,1]: {t}");
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(t: f64, a: f64, b: f64) -> f64 {
    a + t * (b - a)
}

/// Unit gradient vectors on the corners of an integer lattice.
#[derive(Debug, Clone)]
pub struct GradientGrid {
    cells_x: u32,
    cells_y: u32,
    gradients: Vec<(f64, f64)>,
}

impl GradientGrid {
    /// Random unit gradients on a `cells_x x cells_y` cell lattice.
    pub fn random(cells_x: u32, cells_y: u32, rng: &mut Rng) -> Self {
        let corners = (cells_x as usize + 1) * (cells_y as usize + 1);
        let gradients = (0..corners).map(|_| rng.unit_vector()).collect();
        Self { cells_x, cells_y, gradients }
    }

    /// Every corner gets the same gradient. Test construction.
    pub fn uniform(cells_x: u32, cells_y: u32, gradient: (f64, f64)) -> Self {
        let corners = (cells_x as usize + 1) * (cells_y as usize + 1);
        Self { cells_x, cells_y, gradients: vec![gradient; corners] }
    }

    pub fn cells(&self) -> (u32, u32) {
        (self.cells_x, self.cells_y)
    }

    pub fn gradient(&self, ix: u32, iy: u32) -> (f64, f64) {
        debug_assert!(ix <= self.cells_x && iy <= self.cells_y);
        self.gradients[iy as usize * (self.cells_x as usize + 1) + ix as usize]
    }
}

/// Gradient noise at `(x, y)`: fade-interpolated corner dot products.
/// The magnitude is bounded by `sqrt(2)/2`.
pub fn perlin_noise_2d(x: f64, y: f64, grid: &GradientGrid) -> f64 {
    assert!(
        x >= 0.0 && y >= 0.0 && x <= grid.cells_x as f64 && y <= grid.cells_y as f64,
        "sample point ({x}, {y}) outside gradient lattice"
    );
    // Right/bottom edge points fold into the last cell with offset 1.
    let ix = (x.floor() as u32).min(grid.cells_x - 1);
    let iy = (y.floor() as u32).min(grid.cells_y - 1);
    let fx = x - ix as f64;
    let fy = y - iy as f64;

    let dot = |dx: u32, dy: u32| -> f64 {
        let (gx, gy) = grid.gradient(ix + dx, iy + dy);
        gx * (fx - dx as f64) + gy * (fy - dy as f64)
    };

    let u = perlin_fade(fx);
    let v = perlin_fade(fy);
    lerp(v, lerp(u, dot(0, 0), dot(1, 0)), lerp(u, dot(0, 1), dot(1, 1)))
}

/// Multi-octave Perlin field over a pixel grid.
///
/// Octave `k` samples at `(x * 2^k / cell_size, y * 2^k / cell_size)` with its
/// own gradient lattice drawn from `rng.substream(k)`; contributions are
/// weighted by `persistence^k` and the sum is normalized by the total weight,
/// keeping the field inside [-1, 1].
pub fn fractal_perlin(
    width: u32,
    height: u32,
    params: &PerlinParams,
    rng: &Rng,
) -> Result<ScalarField, RulegenError> {
    assert!(params.cell_size >= 2, "cell_size must be >= 2");
    assert!(params.octaves >= 1, "octaves must be >= 1");
    assert!(params.persistence > 0.0 && params.persistence <= 1.0);
    if width < params.cell_size || height < params.cell_size {
        return Err(RulegenError::DimensionTooSmall {
            width,
            height,
            min: params.cell_size,
        });
    }

    let mut values = vec![0.0f64; width as usize * height as usize];
    let mut norm = 0.0;
    for k in 0..params.octaves {
        let freq = (1u64 << k) as f64 / params.cell_size as f64;
        let cells_x = ((width.saturating_sub(1)) as f64 * freq).floor() as u32 + 1;
        let cells_y = ((height.saturating_sub(1)) as f64 * freq).floor() as u32 + 1;
        let mut octave_rng = rng.substream(k as u64);
        let grid = GradientGrid::random(cells_x, cells_y, &mut octave_rng);
        let amp = params.persistence.powi(k as i32);
        norm += amp;
        let mut i = 0;
        for y in 0..height {
            for x in 0..width {
                values[i] += amp * perlin_noise_2d(x as f64 * freq, y as f64 * freq, &grid);
                i += 1;
            }
        }
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(ScalarField::new(width, height, values))
}

/// Mask bit set exactly where the field exceeds the threshold.
pub fn threshold_mask(field: &ScalarField, threshold: f64) -> DefectMask {
    let bits = field.values().iter().map(|&v| v > threshold).collect();
    DefectMask::from_bits(field.width(), field.height(), bits)
}
