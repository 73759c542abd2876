//! Composite objective
//!
//! `L = sum_{j,t} ||y_{j,t} - F_Omega(S_j x_t)||^2
//!      + lambda_s sum_{n,t} |w_{n,t}|
//!      + lambda_t sum_t ||x_{t+1} - x_t||_1`
//!
//! and its gradient with respect to every learnable block. The absolute
//! values are smoothed as `sqrt(|z|^2 + eps^2) - eps`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::Result;
use crate::forward::{CineImage, ForwardModel, Samples};
use crate::primitive::FrameGeometry;
use crate::raster::{backward, rasterize, RasterOptions};
use crate::temporal::{accumulate_frame_gradient, ClampMask, GaborParams, PrimitiveSet, TemporalBases};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub eps_abs: f64,
}

impl LossWeights {
    pub fn data_only() -> Self {
        Self {
            lambda_s: 0.0,
            lambda_t: 0.0,
            eps_abs: 1e-8,
        }
    }
}

/// Gradient with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub items: Vec<GaborParams>,
    pub bases: TemporalBases,
}

impl ModelGradient {
    pub fn zeros_like(ps: &PrimitiveSet) -> Self {
        let (rg, rc) = (ps.bases.rank_geom, ps.bases.rank_contrast);
        Self {
            items: vec![GaborParams::zeros(rg, rc); ps.len()],
            bases: TemporalBases::zeros(ps.frames(), rg, rc),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bases.is_finite() && self.items.iter().all(GaborParams::is_finite)
    }
}

#[derive(Debug, Clone)]
pub struct LossEvaluation {
    pub data: f64,
    pub sparsity: f64,
    pub tv: f64,
    pub gradient: ModelGradient,
    pub rendered: CineImage,
}

impl LossEvaluation {
    pub fn total(&self) -> f64 {
        self.data + self.sparsity + self.tv
    }
}

#[inline]
fn smooth_abs(z: Complex64, eps: f64) -> (f64, Complex64) {
    let r = (z.norm_sqr() + eps * eps).sqrt();
    (r - eps, z / r)
}

/// Renders every frame of the model at its training grid.
pub fn render_all(ps: &PrimitiveSet) -> Result<CineImage> {
    let opts = RasterOptions::with_modulation(ps.modulation);
    let frames = (0..ps.frames())
        .map(|t| ps.assemble_frame(t).map(|g| rasterize(&g, ps.grid.height, ps.grid.width, opts)))
        .collect::<Result<Vec<_>>>()?;
    CineImage::from_frames(frames)
}

/// Loss value only; cheaper than [`total_loss`] when no gradient is needed.
pub fn loss_value(ps: &PrimitiveSet, op: &ForwardModel, y: &Samples, weights: &LossWeights) -> Result<(f64, f64, f64)> {
    let x = render_all(ps)?;
    let (data, _) = op.data_loss_and_adjoint(&x, y)?;
    let eps = weights.eps_abs;
    let mut sparsity = 0.0;
    if weights.lambda_s > 0.0 {
        for w in ps.weight_matrix()? {
            sparsity += smooth_abs(w, eps).0;
        }
    }
    let mut tv = 0.0;
    if weights.lambda_t > 0.0 {
        for t in 0..x.frames.saturating_sub(1) {
            for (a, b) in x.frame(t).iter().zip(x.frame(t + 1)) {
                tv += smooth_abs(b - a, eps).0;
            }
        }
    }
    Ok((data, weights.lambda_s * sparsity, weights.lambda_t * tv))
}

/// Loss and full gradient through rasterization and the temporal model.
pub fn total_loss(ps: &PrimitiveSet, op: &ForwardModel, y: &Samples, weights: &LossWeights) -> Result<LossEvaluation> {
    let opts = RasterOptions::with_modulation(ps.modulation);
    let (height, width) = (ps.grid.height, ps.grid.width);
    let frame_count = ps.frames();

    let assembled: Vec<Vec<(FrameGeometry, ClampMask)>> =
        (0..frame_count).map(|t| ps.assemble_frame_masked(t)).collect::<Result<_>>()?;
    let geometries: Vec<Vec<FrameGeometry>> =
        assembled.iter().map(|f| f.iter().map(|(g, _)| *g).collect()).collect();

    let renders: Vec<_> = geometries.par_iter().map(|g| rasterize(g, height, width, opts)).collect();
    let x = CineImage::from_frames(renders)?;
    let (data, mut sensitivity) = op.data_loss_and_adjoint(&x, y)?;

    let eps = weights.eps_abs;
    let mut tv = 0.0;
    if weights.lambda_t > 0.0 {
        let n = x.frame_len();
        for t in 0..frame_count.saturating_sub(1) {
            for p in 0..n {
                let diff = x.data[(t + 1) * n + p] - x.data[t * n + p];
                let (value, grad) = smooth_abs(diff, eps);
                tv += value;
                let g = grad * weights.lambda_t;
                sensitivity.data[(t + 1) * n + p] += g;
                sensitivity.data[t * n + p] -= g;
            }
        }
    }

    let frame_grads: Vec<_> = (0..frame_count)
        .into_par_iter()
        .map(|t| backward(&geometries[t], &sensitivity.frame_grid(t), opts))
        .collect();

    let mut gradient = ModelGradient::zeros_like(ps);
    let mut sparsity = 0.0;
    for (t, grads) in frame_grads.into_iter().enumerate() {
        for (n, mut g) in grads.into_iter().enumerate() {
            let (geometry, mask) = &assembled[t][n];
            if weights.lambda_s > 0.0 {
                let (value, grad) = smooth_abs(geometry.w, eps);
                sparsity += value;
                g.d_w += grad * weights.lambda_s;
            }
            accumulate_frame_gradient(&ps.items[n], &ps.bases, t, &g, mask, &mut gradient.items[n], &mut gradient.bases);
        }
    }

    Ok(LossEvaluation {
        data,
        sparsity: weights.lambda_s * sparsity,
        tv: weights.lambda_t * tv,
        gradient,
        rendered: x,
    })
}
