//! Frequency-modulated Gaussian (Gabor) primitives in the plane.
//!
//! Coordinates are normalized to the field of view: a `D`-pixel axis maps
//! pixel `p` to `(p + 0.5) / D - 0.5`, so the image occupies `[-0.5, 0.5)`.
//! Frequencies are in cycles per field of view. Vectors are `[x, y]` with
//! `x` running along image columns and `y` along rows.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Culling radius in Mahalanobis units used by every rasterization path.
pub const CULL_SIGMA: f64 = 3.0;

/// Whether primitives carry a complex-exponential carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Gabor,
    /// The `xi = 0` special case; the carrier is skipped entirely.
    Gaussian,
}

impl Modulation {
    pub fn as_str(self) -> &'static str {
        match self {
            Modulation::Gabor => "gabor",
            Modulation::Gaussian => "gaussian",
        }
    }
}

impl std::str::FromStr for Modulation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gabor" => Ok(Modulation::Gabor),
            "gaussian" => Ok(Modulation::Gaussian),
            other => Err(format!("unknown modulation mode `{other}`")),
        }
    }
}

/// Rotated anisotropic covariance `R(theta) diag(s1^2, s2^2) R(theta)^T`,
/// stored through the rotation angle and the log of the two axis scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariance2 {
    pub theta: f64,
    pub log_s: [f64; 2],
}

impl Covariance2 {
    pub fn new(theta: f64, scales: [f64; 2]) -> Self {
        Self {
            theta,
            log_s: [scales[0].ln(), scales[1].ln()],
        }
    }

    pub fn isotropic(scale: f64) -> Self {
        Self::new(0.0, [scale, scale])
    }

    pub fn scales(&self) -> [f64; 2] {
        [self.log_s[0].exp(), self.log_s[1].exp()]
    }

    /// `[[xx, xy], [xy, yy]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (sin, cos) = self.theta.sin_cos();
        let [s1, s2] = self.scales();
        let (v1, v2) = (s1 * s1, s2 * s2);
        let xx = cos * cos * v1 + sin * sin * v2;
        let yy = sin * sin * v1 + cos * cos * v2;
        let xy = cos * sin * (v1 - v2);
        [[xx, xy], [xy, yy]]
    }

    pub fn inverse(&self) -> [[f64; 2]; 2] {
        let (sin, cos) = self.theta.sin_cos();
        let [s1, s2] = self.scales();
        let (p1, p2) = (1.0 / (s1 * s1), 1.0 / (s2 * s2));
        let xx = cos * cos * p1 + sin * sin * p2;
        let yy = sin * sin * p1 + cos * cos * p2;
        let xy = cos * sin * (p1 - p2);
        [[xx, xy], [xy, yy]]
    }

    pub fn det(&self) -> f64 {
        (2.0 * (self.log_s[0] + self.log_s[1])).exp()
    }

    /// Squared Mahalanobis distance `d^T Sigma^-1 d`.
    pub fn mahalanobis_sq(&self, d: [f64; 2]) -> f64 {
        let (sin, cos) = self.theta.sin_cos();
        let [s1, s2] = self.scales();
        let a1 = cos * d[0] + sin * d[1];
        let a2 = -sin * d[0] + cos * d[1];
        (a1 / s1).powi(2) + (a2 / s2).powi(2)
    }
}

/// One primitive's geometry and complex weight at a single frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGeometry {
    pub mu: [f64; 2],
    pub cov: Covariance2,
    pub xi: [f64; 2],
    pub w: Complex64,
}

impl FrameGeometry {
    pub fn is_finite(&self) -> bool {
        self.mu.iter().all(|v| v.is_finite())
            && self.xi.iter().all(|v| v.is_finite())
            && self.cov.theta.is_finite()
            && self.cov.log_s.iter().all(|v| v.is_finite())
            && self.w.re.is_finite()
            && self.w.im.is_finite()
    }
}

/// Unit-weight primitive value at position `r`:
/// `exp(i 2 pi xi.(r - mu)) * exp(-1/2 (r - mu)^T Sigma^-1 (r - mu))`.
pub fn eval_primitive(g: &FrameGeometry, r: [f64; 2]) -> Complex64 {
    let d = [r[0] - g.mu[0], r[1] - g.mu[1]];
    let envelope = (-0.5 * g.cov.mahalanobis_sq(d)).exp();
    let phase = 2.0 * PI * (g.xi[0] * d[0] + g.xi[1] * d[1]);
    Complex64::from_polar(envelope, phase)
}

/// Continuous Fourier transform of the unit-weight primitive at frequency `k`
/// (cycles/FOV): `2 pi sqrt(det Sigma) exp(-2 pi^2 (k-xi)^T Sigma (k-xi)) exp(-i 2 pi k.mu)`.
pub fn spectrum_closed_form(g: &FrameGeometry, k: [f64; 2]) -> Complex64 {
    let sigma = g.cov.matrix();
    let dk = [k[0] - g.xi[0], k[1] - g.xi[1]];
    let quad = sigma[0][0] * dk[0] * dk[0]
        + 2.0 * sigma[0][1] * dk[0] * dk[1]
        + sigma[1][1] * dk[1] * dk[1];
    let amplitude = 2.0 * PI * g.cov.det().sqrt() * (-2.0 * PI * PI * quad).exp();
    Complex64::from_polar(amplitude, -2.0 * PI * (k[0] * g.mu[0] + k[1] * g.mu[1]))
}

/// Axis-aligned box in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportBox {
    pub center: [f64; 2],
    pub half: [f64; 2],
}

impl SupportBox {
    pub fn lo(&self) -> [f64; 2] {
        [self.center[0] - self.half[0], self.center[1] - self.half[1]]
    }

    pub fn hi(&self) -> [f64; 2] {
        [self.center[0] + self.half[0], self.center[1] + self.half[1]]
    }

    pub fn contains(&self, r: [f64; 2]) -> bool {
        (r[0] - self.center[0]).abs() <= self.half[0] && (r[1] - self.center[1]).abs() <= self.half[1]
    }
}

/// Tightest axis-aligned box around the `n_sigma` Mahalanobis ellipse.
pub fn support_box(g: &FrameGeometry, n_sigma: f64) -> SupportBox {
    let sigma = g.cov.matrix();
    SupportBox {
        center: g.mu,
        half: [n_sigma * sigma[0][0].sqrt(), n_sigma * sigma[1][1].sqrt()],
    }
}

/// Normalized coordinate of pixel `index` on an axis of `len` pixels.
#[inline]
pub fn pixel_center(index: usize, len: usize) -> f64 {
    (index as f64 + 0.5) / len as f64 - 0.5
}

/// Inclusive pixel index range whose centers fall inside `[lo, hi]`, or
/// `None` when the interval misses the axis.
pub fn pixel_range(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
    let n = len as f64;
    let first = ((lo + 0.5) * n - 0.5).ceil().max(0.0);
    let last = ((hi + 0.5) * n - 0.5).floor().min(n - 1.0);
    if !(first <= last) {
        return None;
    }
    let (mut first, mut last) = (first as usize, last as usize);
    // Rounding at the boundary can disagree with `pixel_center` by one ulp.
    while first <= last && pixel_center(first, len) < lo {
        first += 1;
    }
    while last >= first && pixel_center(last, len) > hi {
        if last == 0 {
            return None;
        }
        last -= 1;
    }
    (first <= last).then_some((first, last))
}

/// Precomputed per-primitive quantities for fast row-wise evaluation on a
/// pixel grid. Values along a row are generated by a multiplicative
/// recurrence so only the row start needs `exp`/`sincos`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Prepared {
    pub mu: [f64; 2],
    pub xi: [f64; 2],
    pub inv: [[f64; 2]; 2],
    pub w: Complex64,
    /// Inclusive pixel ranges `(rows, cols)` of the culled support.
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub modulated: bool,
}

impl Prepared {
    pub fn new(g: &FrameGeometry, height: usize, width: usize, modulation: Modulation) -> Option<Self> {
        let bx = support_box(g, CULL_SIGMA);
        let (lo, hi) = (bx.lo(), bx.hi());
        let cols = pixel_range(lo[0], hi[0], width)?;
        let rows = pixel_range(lo[1], hi[1], height)?;
        let modulated = modulation == Modulation::Gabor;
        Some(Self {
            mu: g.mu,
            xi: if modulated { g.xi } else { [0.0, 0.0] },
            inv: g.cov.inverse(),
            w: g.w,
            rows,
            cols,
            modulated,
        })
    }

    #[inline]
    fn value_at(&self, dx: f64, dy: f64) -> Complex64 {
        let q = self.inv[0][0] * dx * dx + 2.0 * self.inv[0][1] * dx * dy + self.inv[1][1] * dy * dy;
        let env = (-0.5 * q).exp();
        if self.modulated {
            let phase = 2.0 * PI * (self.xi[0] * dx + self.xi[1] * dy);
            Complex64::from_polar(env, phase)
        } else {
            Complex64::new(env, 0.0)
        }
    }

    /// Calls `f(col, dx, value)` for each column `c0..=c1` of row `row`,
    /// where `value` is the unit-weight primitive at that pixel.
    #[inline]
    pub fn for_each_in_row(
        &self,
        row: usize,
        c0: usize,
        c1: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, f64, f64, Complex64),
    ) {
        let dy = pixel_center(row, height) - self.mu[1];
        let step = 1.0 / width as f64;
        let mut dx = pixel_center(c0, width) - self.mu[0];
        let mut value = self.value_at(dx, dy);
        // value(dx + step) / value(dx), itself advancing by exp(-A step^2).
        let a = self.inv[0][0];
        let b = self.inv[0][1];
        let log_ratio = -0.5 * (a * (2.0 * dx * step + step * step) + 2.0 * b * step * dy);
        let mut ratio = if self.modulated {
            Complex64::from_polar(log_ratio.exp(), 2.0 * PI * self.xi[0] * step)
        } else {
            Complex64::new(log_ratio.exp(), 0.0)
        };
        let decay = (-a * step * step).exp();
        for col in c0..=c1 {
            f(col, dx, dy, value);
            value *= ratio;
            ratio *= decay;
            dx += step;
        }
    }
}
