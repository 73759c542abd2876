//! Model analysis: carrier-frequency decomposition, spectral footprints,
//! rendering on arbitrary grids and the rank of the weight matrix.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitive::FrameGeometry;
use crate::raster::{rasterize, ComplexGrid, RasterOptions};
use crate::temporal::PrimitiveSet;

/// Default split between low and high carrier frequencies, as a fraction of
/// Nyquist.
pub const DEFAULT_XI_THRESHOLD: f64 = 0.25;

/// Carrier magnitude relative to Nyquist on each axis.
pub fn normalized_carrier(xi: [f64; 2], height: usize, width: usize) -> f64 {
    (xi[0] / (width as f64 / 2.0)).hypot(xi[1] / (height as f64 / 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub low: ComplexGrid,
    pub high: ComplexGrid,
    /// Render of every primitive together.
    pub full: ComplexGrid,
    pub low_count: usize,
    pub high_count: usize,
}

/// Renders primitives with normalized `|xi_{n,t}| < threshold` and the rest
/// separately, plus the full render.
pub fn frequency_decompose(ps: &PrimitiveSet, t: usize, threshold: f64) -> Result<Decomposition> {
    let frame = ps.assemble_frame(t)?;
    let (h, w) = (ps.grid.height, ps.grid.width);
    let (low, high): (Vec<FrameGeometry>, Vec<FrameGeometry>) =
        frame.iter().partition(|g| normalized_carrier(g.xi, h, w) < threshold);
    let opts = RasterOptions::with_modulation(ps.modulation);
    Ok(Decomposition {
        low: rasterize(&low, h, w, opts),
        high: rasterize(&high, h, w, opts),
        full: rasterize(&frame, h, w, opts),
        low_count: low.len(),
        high_count: high.len(),
    })
}

/// One primitive's spectral footprint in frame `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralDot {
    /// Center frequency, cycles/FOV.
    pub xi: [f64; 2],
    /// Spectral standard deviation along each principal axis, `1 / (2 pi s)`.
    pub sigma_k: [f64; 2],
    /// Same orientation as the spatial envelope.
    pub angle: f64,
    pub weight_abs: f64,
}

impl SpectralDot {
    /// Semi-axes of the 3-sigma support ellipse.
    pub fn ellipse_axes(&self) -> [f64; 2] {
        [3.0 * self.sigma_k[0], 3.0 * self.sigma_k[1]]
    }
}

pub fn kspace_scatter(ps: &PrimitiveSet, t: usize) -> Result<Vec<SpectralDot>> {
    Ok(ps
        .assemble_frame(t)?
        .iter()
        .map(|g| {
            let s = g.cov.scales();
            SpectralDot {
                xi: g.xi,
                sigma_k: [1.0 / (2.0 * PI * s[0]), 1.0 / (2.0 * PI * s[1])],
                angle: g.cov.theta,
                weight_abs: g.w.norm(),
            }
        })
        .collect())
}

/// Smallest grid accepted by [`render_at`].
pub const MIN_RENDER_DIM: usize = 4;

/// Frame `t` rasterized on an `height x width` grid over the same field of
/// view.
pub fn render_at(ps: &PrimitiveSet, t: usize, height: usize, width: usize) -> Result<ComplexGrid> {
    if height < MIN_RENDER_DIM || width < MIN_RENDER_DIM {
        return Err(Error::InvalidConfig(format!(
            "render grid {height}x{width} is below {MIN_RENDER_DIM}x{MIN_RENDER_DIM}"
        )));
    }
    let frame = ps.assemble_frame(t)?;
    Ok(rasterize(&frame, height, width, RasterOptions::with_modulation(ps.modulation)))
}

/// Mean over `factor x factor` blocks.
pub fn area_downsample(grid: &ComplexGrid, factor: usize) -> Result<ComplexGrid> {
    if factor == 0 || !grid.height.is_multiple_of(factor) || !grid.width.is_multiple_of(factor) {
        return Err(Error::Shape(format!(
            "{}x{} grid is not divisible by {factor}",
            grid.height, grid.width
        )));
    }
    let (h, w) = (grid.height / factor, grid.width / factor);
    let norm = (factor * factor) as f64;
    let data = (0..h * w)
        .map(|p| {
            let (i, j) = (p / w, p % w);
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..factor {
                for b in 0..factor {
                    acc += grid.get(i * factor + a, j * factor + b);
                }
            }
            acc / norm
        })
        .collect();
    ComplexGrid::from_vec(h, w, data)
}

/// `||a - b|| / ||b||`.
pub fn nrmse(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    (num / den).sqrt()
}

/// Singular values of the `N x T` weight matrix, descending.
pub fn weight_singular_values(ps: &PrimitiveSet) -> Result<Vec<f64>> {
    let w = ps.weight_matrix()?;
    let m = DMatrix::from_row_slice(ps.len(), ps.frames(), &w);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Count of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(singular_values: &[f64], rel_tol: f64) -> usize {
    let max = singular_values.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn weight_rank(ps: &PrimitiveSet) -> Result<usize> {
    Ok(numerical_rank(&weight_singular_values(ps)?, 1e-10))
}
