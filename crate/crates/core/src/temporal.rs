//! Per-frame primitive geometry and weights from static parameters plus
//! shared low-rank temporal bases.
//!
//! Geometry follows `param_t = param + C v_{g,t}` for the center, angle,
//! log-scales and carrier; the complex weight is
//! `w_t = u . v_{c,t} + c_w . v_{g,t}` (plain bilinear products, no
//! conjugation). The weight matrix over all primitives and frames therefore
//! has rank at most `R_c + R_g`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::primitive::{Covariance2, FrameGeometry, Modulation};

/// Learnable parameter groups, each with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Mu,
    Theta,
    LogScale,
    Xi,
    Coefficients,
    Bases,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Mu,
        ParamGroup::Theta,
        ParamGroup::LogScale,
        ParamGroup::Xi,
        ParamGroup::Coefficients,
        ParamGroup::Bases,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Mu => "mu",
            ParamGroup::Theta => "theta",
            ParamGroup::LogScale => "log_s",
            ParamGroup::Xi => "xi",
            ParamGroup::Coefficients => "coefficients",
            ParamGroup::Bases => "bases",
        }
    }
}

/// Static parameters of one primitive and its coupling to the temporal bases.
///
/// The same type doubles as a gradient container; complex entries then hold
/// `dL/dRe + i dL/dIm`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaborParams {
    pub mu: [f64; 2],
    pub theta: f64,
    pub log_s: [f64; 2],
    pub xi: [f64; 2],
    /// `2 x R_g`, rows are the x and y components.
    pub coeff_mu: [Vec<f64>; 2],
    pub coeff_theta: Vec<f64>,
    pub coeff_logs: [Vec<f64>; 2],
    pub coeff_xi: [Vec<f64>; 2],
    /// Intensity coefficients, length `R_c`.
    pub u: Vec<Complex64>,
    /// Weight coupling to the geometry basis, length `R_g`.
    pub coeff_w: Vec<Complex64>,
}

impl GaborParams {
    pub fn zeros(rank_geom: usize, rank_contrast: usize) -> Self {
        let rg = || vec![0.0; rank_geom];
        Self {
            mu: [0.0; 2],
            theta: 0.0,
            log_s: [0.0; 2],
            xi: [0.0; 2],
            coeff_mu: [rg(), rg()],
            coeff_theta: rg(),
            coeff_logs: [rg(), rg()],
            coeff_xi: [rg(), rg()],
            u: vec![Complex64::new(0.0, 0.0); rank_contrast],
            coeff_w: vec![Complex64::new(0.0, 0.0); rank_geom],
        }
    }

    pub fn rank_geom(&self) -> usize {
        self.coeff_theta.len()
    }

    pub fn rank_contrast(&self) -> usize {
        self.u.len()
    }

    pub fn num_scalars(rank_geom: usize, rank_contrast: usize) -> usize {
        7 + 9 * rank_geom + 2 * rank_contrast
    }

    /// Visits every real scalar in a fixed layout order.
    pub fn visit(&self, mut f: impl FnMut(ParamGroup, f64)) {
        use ParamGroup::*;
        self.mu.iter().for_each(|&v| f(Mu, v));
        f(Theta, self.theta);
        self.log_s.iter().for_each(|&v| f(LogScale, v));
        self.xi.iter().for_each(|&v| f(Xi, v));
        for v in self
            .coeff_mu
            .iter()
            .flatten()
            .chain(&self.coeff_theta)
            .chain(self.coeff_logs.iter().flatten())
            .chain(self.coeff_xi.iter().flatten())
        {
            f(Coefficients, *v);
        }
        for z in self.u.iter().chain(&self.coeff_w) {
            f(Coefficients, z.re);
            f(Coefficients, z.im);
        }
    }

    /// Mutable counterpart of [`GaborParams::visit`], same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(ParamGroup, &mut f64)) {
        use ParamGroup::*;
        self.mu.iter_mut().for_each(|v| f(Mu, v));
        f(Theta, &mut self.theta);
        self.log_s.iter_mut().for_each(|v| f(LogScale, v));
        self.xi.iter_mut().for_each(|v| f(Xi, v));
        let [m0, m1] = &mut self.coeff_mu;
        let [l0, l1] = &mut self.coeff_logs;
        let [x0, x1] = &mut self.coeff_xi;
        for v in m0
            .iter_mut()
            .chain(m1.iter_mut())
            .chain(self.coeff_theta.iter_mut())
            .chain(l0.iter_mut())
            .chain(l1.iter_mut())
            .chain(x0.iter_mut())
            .chain(x1.iter_mut())
        {
            f(Coefficients, v);
        }
        for z in self.u.iter_mut().chain(self.coeff_w.iter_mut()) {
            f(Coefficients, &mut z.re);
            f(Coefficients, &mut z.im);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::num_scalars(self.rank_geom(), self.rank_contrast()));
        self.visit(|_, v| out.push(v));
        out
    }

    pub fn unflatten(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.visit_mut(|_, v| *v = *it.next().expect("flat parameter vector too short"));
        debug_assert!(it.next().is_none());
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut out = Vec::new();
        self.visit(|g, _| out.push(g));
        out
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, v| ok &= v.is_finite());
        ok
    }

    pub fn add_assign(&mut self, other: &GaborParams) {
        let flat = other.flatten();
        let mut it = flat.iter();
        self.visit_mut(|_, v| *v += it.next().unwrap());
    }

    pub fn covariance(&self) -> Covariance2 {
        Covariance2 {
            theta: self.theta,
            log_s: self.log_s,
        }
    }
}

/// Shared temporal bases: `V_g` (real, `T x R_g`) and `V_c` (complex, `T x R_c`),
/// both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalBases {
    pub frames: usize,
    pub rank_geom: usize,
    pub rank_contrast: usize,
    pub geom: Vec<f64>,
    pub contrast: Vec<Complex64>,
}

impl TemporalBases {
    pub fn zeros(frames: usize, rank_geom: usize, rank_contrast: usize) -> Self {
        Self {
            frames,
            rank_geom,
            rank_contrast,
            geom: vec![0.0; frames * rank_geom],
            contrast: vec![Complex64::new(0.0, 0.0); frames * rank_contrast],
        }
    }

    /// `V_g` from the first `R_g` non-constant DCT-II vectors (unit norm);
    /// `V_c` with an all-ones first column and small seeded complex noise
    /// elsewhere.
    pub fn initial<R: Rng>(frames: usize, rank_geom: usize, rank_contrast: usize, rng: &mut R) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidConfig("at least one frame is required".into()));
        }
        if rank_geom + 1 > frames && rank_geom > 0 {
            return Err(Error::InvalidConfig(format!(
                "geometry rank {rank_geom} needs at least {} frames",
                rank_geom + 1
            )));
        }
        if rank_contrast == 0 {
            return Err(Error::InvalidConfig("contrast rank must be at least 1".into()));
        }
        let mut bases = Self::zeros(frames, rank_geom, rank_contrast);
        for r in 0..rank_geom {
            let freq = (r + 1) as f64;
            let column: Vec<f64> = (0..frames)
                .map(|t| (PI * freq * (t as f64 + 0.5) / frames as f64).cos())
                .collect();
            let norm = column.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (t, v) in column.into_iter().enumerate() {
                bases.geom[t * rank_geom + r] = v / norm;
            }
        }
        let noise = Normal::new(0.0, 1e-2).expect("valid normal");
        for t in 0..frames {
            for r in 0..rank_contrast {
                bases.contrast[t * rank_contrast + r] = if r == 0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(noise.sample(rng), noise.sample(rng))
                };
            }
        }
        Ok(bases)
    }

    pub fn geom_row(&self, t: usize) -> &[f64] {
        &self.geom[t * self.rank_geom..(t + 1) * self.rank_geom]
    }

    pub fn contrast_row(&self, t: usize) -> &[Complex64] {
        &self.contrast[t * self.rank_contrast..(t + 1) * self.rank_contrast]
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.geom.clone();
        for z in &self.contrast {
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    pub fn unflatten(&mut self, values: &[f64]) {
        let ng = self.geom.len();
        self.geom.copy_from_slice(&values[..ng]);
        for (z, pair) in self.contrast.iter_mut().zip(values[ng..].chunks_exact(2)) {
            *z = Complex64::new(pair[0], pair[1]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.geom.iter().all(|v| v.is_finite()) && self.contrast.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn check_frame(&self, t: usize) -> Result<()> {
        if t >= self.frames {
            return Err(Error::FrameOutOfRange {
                index: t,
                frames: self.frames,
            });
        }
        Ok(())
    }
}

/// Bounds applied to every per-frame geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryLimits {
    /// Componentwise carrier bound `[W/2, H/2]`.
    pub xi_max: [f64; 2],
    /// Floor on each log-scale: half a pixel on the finer axis.
    pub log_s_min: f64,
}

impl GeometryLimits {
    pub fn for_grid(height: usize, width: usize) -> Self {
        Self {
            xi_max: [width as f64 / 2.0, height as f64 / 2.0],
            log_s_min: (0.5 / height.max(width) as f64).ln(),
        }
    }
}

/// Which per-frame components hit a clamp (their gradient is zero).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClampMask {
    pub xi: [bool; 2],
    pub log_s: [bool; 2],
}

fn dot(coeff: &[f64], v: &[f64]) -> f64 {
    coeff.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Frame-`t` geometry of one primitive plus the clamp mask; the weight is
/// filled by [`weight_at`].
pub fn geometry_at_masked(
    p: &GaborParams,
    bases: &TemporalBases,
    t: usize,
    limits: &GeometryLimits,
    modulation: Modulation,
) -> Result<(FrameGeometry, ClampMask)> {
    bases.check_frame(t)?;
    let v = bases.geom_row(t);
    let mut mask = ClampMask::default();
    let mu = [p.mu[0] + dot(&p.coeff_mu[0], v), p.mu[1] + dot(&p.coeff_mu[1], v)];
    let theta = p.theta + dot(&p.coeff_theta, v);
    let mut log_s = [0.0; 2];
    for d in 0..2 {
        let raw = p.log_s[d] + dot(&p.coeff_logs[d], v);
        if raw < limits.log_s_min {
            mask.log_s[d] = true;
            log_s[d] = limits.log_s_min;
        } else {
            log_s[d] = raw;
        }
    }
    let mut xi = [0.0; 2];
    if modulation == Modulation::Gabor {
        for d in 0..2 {
            let raw = p.xi[d] + dot(&p.coeff_xi[d], v);
            let bound = limits.xi_max[d];
            if raw.abs() > bound {
                mask.xi[d] = true;
                xi[d] = raw.clamp(-bound, bound);
            } else {
                xi[d] = raw;
            }
        }
    } else {
        mask.xi = [true; 2];
    }
    let geometry = FrameGeometry {
        mu,
        cov: Covariance2 { theta, log_s },
        xi,
        w: Complex64::new(0.0, 0.0),
    };
    Ok((geometry, mask))
}

pub fn geometry_at(
    p: &GaborParams,
    bases: &TemporalBases,
    t: usize,
    limits: &GeometryLimits,
    modulation: Modulation,
) -> Result<FrameGeometry> {
    geometry_at_masked(p, bases, t, limits, modulation).map(|(g, _)| g)
}

pub fn weight_at(p: &GaborParams, bases: &TemporalBases, t: usize) -> Result<Complex64> {
    bases.check_frame(t)?;
    let vc = bases.contrast_row(t);
    let vg = bases.geom_row(t);
    let intensity: Complex64 = p.u.iter().zip(vc).map(|(a, b)| a * b).sum();
    let coupling: Complex64 = p.coeff_w.iter().zip(vg).map(|(a, &b)| a * b).sum();
    Ok(intensity + coupling)
}

/// Grid the model was fitted on; fixes the clamp limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
}

/// A full model: primitives, shared bases, training grid and modulation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveSet {
    pub items: Vec<GaborParams>,
    pub bases: TemporalBases,
    pub grid: GridDims,
    pub modulation: Modulation,
}

impl PrimitiveSet {
    pub fn new(items: Vec<GaborParams>, bases: TemporalBases, grid: GridDims, modulation: Modulation) -> Result<Self> {
        let set = Self {
            items,
            bases,
            grid,
            modulation,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::InvalidConfig("a primitive set needs at least one primitive".into()));
        }
        let (rg, rc) = (self.bases.rank_geom, self.bases.rank_contrast);
        if self.bases.geom.len() != self.bases.frames * rg || self.bases.contrast.len() != self.bases.frames * rc {
            return Err(Error::Shape("temporal basis size disagrees with frames x rank".into()));
        }
        for (n, p) in self.items.iter().enumerate() {
            let consistent = p.coeff_theta.len() == rg
                && p.coeff_mu.iter().all(|c| c.len() == rg)
                && p.coeff_logs.iter().all(|c| c.len() == rg)
                && p.coeff_xi.iter().all(|c| c.len() == rg)
                && p.coeff_w.len() == rg
                && p.u.len() == rc;
            if !consistent {
                return Err(Error::Shape(format!("primitive {n} coefficient shapes disagree with ranks ({rg}, {rc})")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.bases.frames
    }

    pub fn limits(&self) -> GeometryLimits {
        GeometryLimits::for_grid(self.grid.height, self.grid.width)
    }

    pub fn num_learnable(&self) -> usize {
        learnable_count(self.items.len(), self.bases.frames, self.bases.rank_geom, self.bases.rank_contrast, self.modulation)
    }

    /// Per-frame geometry and weight for every primitive.
    pub fn assemble_frame(&self, t: usize) -> Result<Vec<FrameGeometry>> {
        Ok(self.assemble_frame_masked(t)?.into_iter().map(|(g, _)| g).collect())
    }

    pub(crate) fn assemble_frame_masked(&self, t: usize) -> Result<Vec<(FrameGeometry, ClampMask)>> {
        let limits = self.limits();
        self.items
            .iter()
            .map(|p| {
                let (mut g, mask) = geometry_at_masked(p, &self.bases, t, &limits, self.modulation)?;
                g.w = weight_at(p, &self.bases, t)?;
                Ok((g, mask))
            })
            .collect()
    }

    /// `N x T` complex weight matrix, row-major.
    pub fn weight_matrix(&self) -> Result<Vec<Complex64>> {
        let t_count = self.frames();
        let mut out = Vec::with_capacity(self.items.len() * t_count);
        for p in &self.items {
            for t in 0..t_count {
                out.push(weight_at(p, &self.bases, t)?);
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.bases.is_finite() && self.items.iter().all(GaborParams::is_finite)
    }
}

/// Number of free real parameters; the Gaussian mode has no carrier terms.
pub fn learnable_count(n: usize, frames: usize, rank_geom: usize, rank_contrast: usize, modulation: Modulation) -> usize {
    let per = GaborParams::num_scalars(rank_geom, rank_contrast)
        - match modulation {
            Modulation::Gabor => 0,
            Modulation::Gaussian => 2 + 2 * rank_geom,
        };
    n * per + frames * (rank_geom + 2 * rank_contrast)
}

/// Chain rule from one frame's geometry/weight gradient into the static
/// parameters, coupling coefficients and bases.
pub(crate) fn accumulate_frame_gradient(
    p: &GaborParams,
    bases: &TemporalBases,
    t: usize,
    grad: &crate::raster::PrimitiveGradient,
    mask: &ClampMask,
    out: &mut GaborParams,
    out_bases: &mut TemporalBases,
) {
    let v = bases.geom_row(t);
    let vc = bases.contrast_row(t);
    let rg = bases.rank_geom;
    let rc = bases.rank_contrast;
    let mut d_logs = grad.d_logs;
    let mut d_xi = grad.d_xi;
    for d in 0..2 {
        if mask.log_s[d] {
            d_logs[d] = 0.0;
        }
        if mask.xi[d] {
            d_xi[d] = 0.0;
        }
    }
    let dvg = &mut out_bases.geom[t * rg..(t + 1) * rg];
    for d in 0..2 {
        out.mu[d] += grad.d_mu[d];
        out.log_s[d] += d_logs[d];
        out.xi[d] += d_xi[d];
        for r in 0..rg {
            out.coeff_mu[d][r] += grad.d_mu[d] * v[r];
            out.coeff_logs[d][r] += d_logs[d] * v[r];
            out.coeff_xi[d][r] += d_xi[d] * v[r];
            dvg[r] += grad.d_mu[d] * p.coeff_mu[d][r] + d_logs[d] * p.coeff_logs[d][r] + d_xi[d] * p.coeff_xi[d][r];
        }
    }
    out.theta += grad.d_theta;
    for r in 0..rg {
        out.coeff_theta[r] += grad.d_theta * v[r];
        dvg[r] += grad.d_theta * p.coeff_theta[r];
    }
    // Weight: packed gradient g of a complex-linear map z = a * b has
    // dL/da = g * conj(b).
    let g = grad.d_w;
    for r in 0..rg {
        out.coeff_w[r] += g * v[r];
        dvg[r] += (g.conj() * p.coeff_w[r]).re;
    }
    let dvc = &mut out_bases.contrast[t * rc..(t + 1) * rc];
    for r in 0..rc {
        out.u[r] += g * vc[r].conj();
        dvc[r] += g * p.u[r].conj();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params<R: Rng>(rng: &mut R, rg: usize, rc: usize) -> GaborParams {
        let mut p = GaborParams::zeros(rg, rc);
        p.visit_mut(|_, v| *v = rng.random_range(-1.0..1.0));
        p.log_s = [rng.random_range(-3.0..-2.0), rng.random_range(-3.0..-2.0)];
        p
    }

    #[test]
    fn zero_coefficients_are_static() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bases = TemporalBases::initial(8, 3, 2, &mut rng).unwrap();
        let mut p = GaborParams::zeros(3, 2);
        p.mu = [0.1, -0.2];
        p.theta = 0.3;
        p.log_s = [-3.0, -2.5];
        p.xi = [2.0, 1.0];
        let limits = GeometryLimits::for_grid(32, 32);
        for t in 0..8 {
            let g = geometry_at(&p, &bases, t, &limits, Modulation::Gabor).unwrap();
            assert_eq!(g.mu, p.mu);
            assert_eq!(g.cov.theta, p.theta);
            assert_eq!(g.cov.log_s, p.log_s);
            assert_eq!(g.xi, p.xi);
        }
    }

    #[test]
    fn single_rank_shift() {
        let mut bases = TemporalBases::zeros(2, 1, 1);
        bases.geom = vec![0.0, 2.0];
        let mut p = GaborParams::zeros(1, 1);
        p.coeff_mu = [vec![0.01], vec![0.0]];
        p.log_s = [-3.0, -3.0];
        let limits = GeometryLimits::for_grid(16, 16);
        let g0 = geometry_at(&p, &bases, 0, &limits, Modulation::Gabor).unwrap();
        let g1 = geometry_at(&p, &bases, 1, &limits, Modulation::Gabor).unwrap();
        assert_eq!(g0.mu, [0.0, 0.0]);
        assert!((g1.mu[0] - 0.02).abs() < 1e-15 && g1.mu[1] == 0.0);
    }

    #[test]
    fn frame_out_of_range() {
        let bases = TemporalBases::zeros(4, 1, 1);
        let p = GaborParams::zeros(1, 1);
        assert!(matches!(weight_at(&p, &bases, 4), Err(Error::FrameOutOfRange { index: 4, frames: 4 })));
        let limits = GeometryLimits::for_grid(8, 8);
        assert!(geometry_at(&p, &bases, 9, &limits, Modulation::Gabor).is_err());
    }

    #[test]
    fn weight_cases() {
        let mut bases = TemporalBases::zeros(5, 2, 1);
        let p = GaborParams::zeros(2, 1);
        for t in 0..5 {
            assert_eq!(weight_at(&p, &bases, t).unwrap(), Complex64::new(0.0, 0.0));
        }
        bases.contrast = vec![Complex64::new(1.0, 0.0); 5];
        bases.geom = (0..10).map(|i| i as f64).collect();
        let mut q = GaborParams::zeros(2, 1);
        q.u[0] = Complex64::new(1.0, 0.0);
        for t in 0..5 {
            assert_eq!(weight_at(&q, &bases, t).unwrap(), Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn scalar_spot_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut bases = TemporalBases::initial(6, 2, 2, &mut rng).unwrap();
        bases.geom.iter_mut().for_each(|v| *v *= 0.1);
        let p = random_params(&mut rng, 2, 2);
        let limits = GeometryLimits::for_grid(1024, 1024);
        let t = 4;
        let v = bases.geom_row(t).to_vec();
        let g = geometry_at(&p, &bases, t, &limits, Modulation::Gabor).unwrap();
        let mu_x = p.mu[0] + p.coeff_mu[0][0] * v[0] + p.coeff_mu[0][1] * v[1];
        let th = p.theta + p.coeff_theta[0] * v[0] + p.coeff_theta[1] * v[1];
        let ls1 = p.log_s[1] + p.coeff_logs[1][0] * v[0] + p.coeff_logs[1][1] * v[1];
        let xi0 = p.xi[0] + p.coeff_xi[0][0] * v[0] + p.coeff_xi[0][1] * v[1];
        assert!((g.mu[0] - mu_x).abs() < 1e-15);
        assert!((g.cov.theta - th).abs() < 1e-15);
        assert!((g.cov.log_s[1] - ls1).abs() < 1e-15);
        assert!((g.xi[0] - xi0).abs() < 1e-15);
        let vc = bases.contrast_row(t);
        let w = p.u[0] * vc[0] + p.u[1] * vc[1] + p.coeff_w[0] * v[0] + p.coeff_w[1] * v[1];
        assert!((weight_at(&p, &bases, t).unwrap() - w).norm() < 1e-15);
    }

    #[test]
    fn clamps_apply_per_frame() {
        let mut bases = TemporalBases::zeros(2, 1, 1);
        bases.geom = vec![0.0, 1.0];
        let mut p = GaborParams::zeros(1, 1);
        p.xi = [7.0, -3.0];
        p.coeff_xi = [vec![5.0], vec![-6.0]];
        p.log_s = [-2.0, -2.0];
        p.coeff_logs = [vec![-10.0], vec![0.0]];
        let limits = GeometryLimits::for_grid(16, 20);
        let (g, mask) = geometry_at_masked(&p, &bases, 1, &limits, Modulation::Gabor).unwrap();
        assert_eq!(g.xi, [10.0, -8.0]);
        assert_eq!(mask.xi, [true, true]);
        assert_eq!(g.cov.log_s[0], limits.log_s_min);
        assert_eq!(mask.log_s, [true, false]);
        let (g0, m0) = geometry_at_masked(&p, &bases, 0, &limits, Modulation::Gabor).unwrap();
        assert_eq!(g0.xi, [7.0, -3.0]);
        assert_eq!(m0, ClampMask::default());
    }

    #[test]
    fn dct_basis_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = TemporalBases::initial(8, 6, 4, &mut rng).unwrap();
        for r in 0..6 {
            for q in 0..6 {
                let d: f64 = (0..8).map(|t| b.geom[t * 6 + r] * b.geom[t * 6 + q]).sum();
                let expected = if r == q { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-12);
            }
            // non-constant: orthogonal to ones
            let s: f64 = (0..8).map(|t| b.geom[t * 6 + r]).sum();
            assert!(s.abs() < 1e-12);
        }
        assert!(TemporalBases::initial(4, 4, 1, &mut rng).is_err());
    }

    #[test]
    fn flatten_layout_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 3, 2);
        let flat = p.flatten();
        assert_eq!(flat.len(), GaborParams::num_scalars(3, 2));
        let mut q = GaborParams::zeros(3, 2);
        q.unflatten(&flat);
        assert_eq!(p, q);
        let groups = p.groups();
        assert_eq!(groups.iter().filter(|g| **g == ParamGroup::Xi).count(), 2);
        assert_eq!(groups.iter().filter(|g| **g == ParamGroup::Mu).count(), 2);
    }

    #[test]
    fn geometry_is_affine_in_basis_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng, 2, 1);
        let mut bases = TemporalBases::zeros(3, 2, 1);
        bases.geom = vec![0.0, 0.0, 0.01, -0.02, 0.02, -0.04];
        let limits = GeometryLimits::for_grid(4096, 4096);
        let g0 = geometry_at(&p, &bases, 0, &limits, Modulation::Gabor).unwrap();
        let g1 = geometry_at(&p, &bases, 1, &limits, Modulation::Gabor).unwrap();
        let g2 = geometry_at(&p, &bases, 2, &limits, Modulation::Gabor).unwrap();
        for d in 0..2 {
            assert!(((g2.mu[d] - g0.mu[d]) - 2.0 * (g1.mu[d] - g0.mu[d])).abs() < 1e-14);
            assert!(((g2.xi[d] - g0.xi[d]) - 2.0 * (g1.xi[d] - g0.xi[d])).abs() < 1e-13);
        }
    }
}
