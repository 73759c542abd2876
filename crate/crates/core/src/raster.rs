//! Tile-parallel rasterization of a frame's primitives onto a complex grid
//! and the matching closed-form backward pass.
//!
//! Every primitive contributes only to pixels whose centers lie inside its
//! 3-sigma support box. Per-pixel accumulation runs in primitive index order
//! and each primitive's gradient is summed over its own support in a fixed
//! pixel order, so both passes are bitwise reproducible for any thread count.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::primitive::{pixel_center, FrameGeometry, Modulation, Prepared};

pub const DEFAULT_TILE: usize = 32;

/// Row-major `height x width` complex image.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} samples for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    /// Normalized coordinate `[x, y]` of pixel `(row, col)`.
    pub fn position(&self, row: usize, col: usize) -> [f64; 2] {
        [pixel_center(col, self.width), pixel_center(row, self.height)]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

/// Gradient of a real objective with respect to one primitive's frame
/// geometry. `d_w` packs `dL/dRe w + i dL/dIm w`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrimitiveGradient {
    pub d_mu: [f64; 2],
    pub d_theta: f64,
    pub d_logs: [f64; 2],
    pub d_xi: [f64; 2],
    pub d_w: Complex64,
}

impl PrimitiveGradient {
    pub fn is_finite(&self) -> bool {
        self.d_mu.iter().chain(&self.d_logs).chain(&self.d_xi).all(|v| v.is_finite())
            && self.d_theta.is_finite()
            && self.d_w.re.is_finite()
            && self.d_w.im.is_finite()
    }
}

/// Rasterization settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterOptions {
    pub modulation: Modulation,
    pub tile: usize,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            modulation: Modulation::Gabor,
            tile: DEFAULT_TILE,
        }
    }
}

impl RasterOptions {
    pub fn with_modulation(modulation: Modulation) -> Self {
        Self {
            modulation,
            ..Self::default()
        }
    }
}

fn prepare(frame: &[FrameGeometry], height: usize, width: usize, modulation: Modulation) -> Vec<Option<Prepared>> {
    frame
        .iter()
        .map(|g| Prepared::new(g, height, width, modulation))
        .collect()
}

/// Renders `sum_n w_n P_n(r)` over culled supports.
pub fn rasterize(frame: &[FrameGeometry], height: usize, width: usize, opts: RasterOptions) -> ComplexGrid {
    let prepared = prepare(frame, height, width, opts.modulation);
    let tile = opts.tile.max(1);
    let tiles_y = height.div_ceil(tile);
    let tiles_x = width.div_ceil(tile);

    let tiles: Vec<(usize, usize, Vec<Complex64>)> = (0..tiles_y * tiles_x)
        .into_par_iter()
        .map(|index| {
            let (ty, tx) = (index / tiles_x, index % tiles_x);
            let (r0, c0) = (ty * tile, tx * tile);
            let (r1, c1) = ((r0 + tile).min(height) - 1, (c0 + tile).min(width) - 1);
            let tw = c1 - c0 + 1;
            let mut buf = vec![Complex64::new(0.0, 0.0); (r1 - r0 + 1) * tw];
            for p in prepared.iter().flatten() {
                let rows = (p.rows.0.max(r0), p.rows.1.min(r1));
                let cols = (p.cols.0.max(c0), p.cols.1.min(c1));
                if rows.0 > rows.1 || cols.0 > cols.1 {
                    continue;
                }
                for row in rows.0..=rows.1 {
                    let line = &mut buf[(row - r0) * tw..(row - r0 + 1) * tw];
                    p.for_each_in_row(row, cols.0, cols.1, height, width, |col, _, _, v| {
                        line[col - c0] += p.w * v;
                    });
                }
            }
            (r0, c0, buf)
        })
        .collect();

    let mut grid = ComplexGrid::zeros(height, width);
    for (r0, c0, buf) in tiles {
        let tw = (c0 + tile).min(width) - c0;
        for (i, line) in buf.chunks_exact(tw).enumerate() {
            let start = (r0 + i) * width + c0;
            grid.data[start..start + tw].copy_from_slice(line);
        }
    }
    grid
}

/// Exact gradient of a real objective `L` given the per-pixel sensitivity
/// `a_p = dL/dRe x_p + i dL/dIm x_p` of the rendered image.
pub fn backward(frame: &[FrameGeometry], adjoint: &ComplexGrid, opts: RasterOptions) -> Vec<PrimitiveGradient> {
    let (height, width) = (adjoint.height, adjoint.width);
    frame
        .par_iter()
        .map(|g| match Prepared::new(g, height, width, opts.modulation) {
            Some(p) => primitive_backward(g, &p, adjoint),
            None => PrimitiveGradient::default(),
        })
        .collect()
}

/// Same as [`backward`], but checks that the adjoint matches the render size.
pub fn backward_checked(
    frame: &[FrameGeometry],
    adjoint: &ComplexGrid,
    height: usize,
    width: usize,
    opts: RasterOptions,
) -> Result<Vec<PrimitiveGradient>> {
    if adjoint.height != height || adjoint.width != width {
        return Err(Error::Shape(format!(
            "adjoint is {}x{}, render is {height}x{width}",
            adjoint.height, adjoint.width
        )));
    }
    Ok(backward(frame, adjoint, opts))
}

fn primitive_backward(g: &FrameGeometry, p: &Prepared, adjoint: &ComplexGrid) -> PrimitiveGradient {
    let (height, width) = (adjoint.height, adjoint.width);
    // Moments of conj(a) P against 1, dx, dy, dx^2, dx dy, dy^2.
    let mut m = [Complex64::new(0.0, 0.0); 6];
    for row in p.rows.0..=p.rows.1 {
        let line = &adjoint.data[row * width..(row + 1) * width];
        p.for_each_in_row(row, p.cols.0, p.cols.1, height, width, |col, dx, dy, v| {
            let c = line[col].conj() * v;
            m[0] += c;
            m[1] += c * dx;
            m[2] += c * dy;
            m[3] += c * (dx * dx);
            m[4] += c * (dx * dy);
            m[5] += c * (dy * dy);
        });
    }
    let b = m.map(|z| g.w * z);
    let [[ixx, ixy], [_, iyy]] = p.inv;
    let xi = p.xi;
    let two_pi = 2.0 * PI;

    let d_mu = [
        ixx * b[1].re + ixy * b[2].re + two_pi * xi[0] * b[0].im,
        ixy * b[1].re + iyy * b[2].re + two_pi * xi[1] * b[0].im,
    ];
    let d_xi = if p.modulated {
        [-two_pi * b[1].im, -two_pi * b[2].im]
    } else {
        [0.0, 0.0]
    };

    let (sin, cos) = g.cov.theta.sin_cos();
    let [s1, s2] = g.cov.scales();
    let (p1, p2) = (1.0 / (s1 * s1), 1.0 / (s2 * s2));
    let (cc, ss, cs) = (cos * cos, sin * sin, cos * sin);
    // Local-axis second moments: a1 = c dx + s dy, a2 = -s dx + c dy.
    let a1a1 = cc * b[3].re + 2.0 * cs * b[4].re + ss * b[5].re;
    let a2a2 = ss * b[3].re - 2.0 * cs * b[4].re + cc * b[5].re;
    let a1a2 = -cs * b[3].re + (cc - ss) * b[4].re + cs * b[5].re;

    PrimitiveGradient {
        d_mu,
        d_theta: -(p1 - p2) * a1a2,
        d_logs: [a1a1 * p1, a2a2 * p2],
        d_xi,
        d_w: m[0].conj(),
    }
}
