//! Poisson harmonization: seamless insertion of source content into a target
//! image by solving the discrete Poisson equation inside the mask.
//!
//! For every interior pixel `p` the solution satisfies
//! `4 f_p - sum(f_q) = 4 s_p - sum(s_q)` over the four neighbors `q`, with
//! Dirichlet boundary `f = target` outside the mask. Gauss-Seidel sweeps run
//! until the max residual drops below `tol` or the sweep budget is spent.

use crate::imgcore::{DefectMask, ImageBuffer};
use crate::rulegen::{params_hash, Provenance, RulegenError, SyntheticSample};

/// One solved channel plane plus its convergence history.
pub struct PlaneSolution {
    pub values: Vec<f64>,
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Gauss-Seidel solve of one channel. `target` and `source` are row-major
/// planes of `width * height` intensities; `interior` lists mask pixels, all
/// strictly inside the border.
pub fn solve_plane(
    target: &[f64],
    source: &[f64],
    width: u32,
    height: u32,
    interior: &[(u32, u32)],
    tol: f64,
    max_sweeps: usize,
) -> PlaneSolution {
    let w = width as usize;
    assert_eq!(target.len(), w * height as usize);
    assert_eq!(source.len(), target.len());
    let idx = |x: u32, y: u32| y as usize * w + x as usize;

    // Divergence of the source: 4 s_p - sum of its four neighbors.
    let rhs: Vec<f64> = interior
        .iter()
        .map(|&(x, y)| {
            4.0 * source[idx(x, y)]
                - source[idx(x - 1, y)]
                - source[idx(x + 1, y)]
                - source[idx(x, y - 1)]
                - source[idx(x, y + 1)]
        })
        .collect();

    let mut f = target.to_vec();
    let max_residual = |f: &[f64]| -> f64 {
        interior
            .iter()
            .zip(&rhs)
            .map(|(&(x, y), &b)| {
                (4.0 * f[idx(x, y)]
                    - f[idx(x - 1, y)]
                    - f[idx(x + 1, y)]
                    - f[idx(x, y - 1)]
                    - f[idx(x, y + 1)]
                    - b)
                    .abs()
            })
            .fold(0.0, f64::max)
    };

    let mut history = Vec::new();
    let mut converged = max_residual(&f) <= tol;
    if !converged {
        for _ in 0..max_sweeps {
            for (&(x, y), &b) in interior.iter().zip(&rhs) {
                f[idx(x, y)] = (f[idx(x - 1, y)]
                    + f[idx(x + 1, y)]
                    + f[idx(x, y - 1)]
                    + f[idx(x, y + 1)]
                    + b)
                    / 4.0;
            }
            let r = max_residual(&f);
            history.push(r);
            if r <= tol {
                converged = true;
                break;
            }
        }
    }
    PlaneSolution { values: f, residual_history: history, converged }
}

/// Harmonizes the masked region of `source` into `target`, per channel.
///
/// Pixels outside the mask are returned unchanged. If the solver exhausts
/// `max_iters` sweeps the best iterate is still produced, wrapped in
/// [`RulegenError::DidNotConverge`] together with the final residual.
pub fn poisson_blend(
    target: &ImageBuffer,
    source: &ImageBuffer,
    mask: &DefectMask,
    tol: f64,
    max_iters: usize,
) -> Result<SyntheticSample, RulegenError> {
    if !target.same_shape(source)
        || mask.width() != target.width()
        || mask.height() != target.height()
    {
        return Err(RulegenError::DimensionMismatch {
            expected: (target.width(), target.height()),
            got: (source.width(), source.height()),
        });
    }
    if mask.is_empty() {
        return Err(RulegenError::EmptyMask { attempts: 1 });
    }
    if mask.touches_border() {
        return Err(RulegenError::MaskTouchesBorder);
    }

    let interior: Vec<(u32, u32)> = (0..mask.height())
        .flat_map(|y| (0..mask.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();

    let n = target.width() as usize * target.height() as usize;
    let mut out = target.clone();
    let mut worst_residual = 0.0f64;
    let mut all_converged = true;
    for c in 0..target.channels() {
        let plane_of = |img: &ImageBuffer| -> Vec<f64> {
            (0..n)
                .map(|i| img.data()[i * img.channels() as usize + c as usize] as f64)
                .collect()
        };
        let solution = solve_plane(
            &plane_of(target),
            &plane_of(source),
            target.width(),
            target.height(),
            &interior,
            tol,
            max_iters,
        );
        all_converged &= solution.converged;
        worst_residual = worst_residual.max(
            solution.residual_history.last().copied().unwrap_or(0.0),
        );
        let w = target.width() as usize;
        for &(x, y) in &interior {
            let v = solution.values[y as usize * w + x as usize];
            out.set(x, y, c, v.round().clamp(0.0, 255.0) as u8);
        }
    }

    let sample = SyntheticSample {
        image: out,
        mask: mask.clone(),
        provenance: Provenance::rule("rule:poisson", params_hash(&(tol, max_iters as u64))),
        seed: 0,
    };
    if all_converged {
        Ok(sample)
    } else {
        Err(RulegenError::DidNotConverge {
            sample: Box::new(sample),
            residual: worst_residual,
        })
    }
}

/// Default sweep budget: ten sweeps per interior pixel.
pub fn default_max_iters(interior_pixels: usize) -> usize {
    10 * interior_pixels.max(1)
}
