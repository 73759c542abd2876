//! Synthetic dynamic phantoms, coil maps, sampling patterns and noisy
//! undersampled datasets with known ground truth.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::frequency_of_index;
use crate::forward::{CineImage, CoilMaps, ForwardModel, KSpaceDataset, Samples, SamplingPattern};
use crate::primitive::pixel_center;

/// Golden-angle increment between consecutive radial spokes, in degrees.
pub const GOLDEN_ANGLE_DEG: f64 = 111.246;

/// Width of the soft edge of every structure, in pixels.
pub const EDGE_WIDTH_PX: f64 = 2.0;

/// Contracting ring with a wall and an interior pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub center: [f64; 2],
    /// Radius of the wall midline at `t = 0`.
    pub radius: f64,
    pub thickness: f64,
    /// Peak fractional radius reduction, reached at mid-cycle.
    pub contraction: f64,
    /// `[re, im]` of the wall amplitude.
    pub wall: [f64; 2],
    pub pool: [f64; 2],
    /// Relative sinusoidal intensity change of the pool over the cycle.
    pub pool_modulation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub angle: f64,
    pub amplitude: [f64; 2],
    #[serde(default)]
    pub modulation: f64,
}

/// Structures are additive; the phase map multiplies the sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub ring: RingSpec,
    pub ellipses: Vec<EllipseSpec>,
    /// Coefficients of `c0 + cx x + cy y + cxx x^2 + cxy x y + cyy y^2`, radians.
    pub phase: [f64; 6],
    /// Default seed for coils, masks and noise derived from this phantom.
    pub seed: u64,
}

impl PhantomSpec {
    /// The beating-ring preset used for benchmarking.
    pub fn beating_ring(height: usize, width: usize, frames: usize) -> Self {
        Self {
            height,
            width,
            frames,
            ring: RingSpec {
                center: [0.05, -0.02],
                radius: 0.16,
                thickness: 0.06,
                contraction: 0.25,
                wall: [0.25, 0.0],
                pool: [0.6, 0.0],
                pool_modulation: 0.15,
            },
            ellipses: vec![
                EllipseSpec {
                    center: [0.0, 0.02],
                    axes: [0.42, 0.34],
                    angle: 0.0,
                    amplitude: [0.3, 0.0],
                    modulation: 0.0,
                },
                EllipseSpec {
                    center: [-0.22, 0.16],
                    axes: [0.14, 0.09],
                    angle: 0.4,
                    amplitude: [0.2, 0.0],
                    modulation: 0.0,
                },
                EllipseSpec {
                    center: [0.2, -0.18],
                    axes: [0.035, 0.035],
                    angle: 0.0,
                    amplitude: [0.45, 0.0],
                    modulation: 0.2,
                },
            ],
            phase: [0.2, 0.8, -0.5, 0.6, 0.3, -0.4],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::DegenerateGeometry(m));
        if self.height < 2 || self.width < 2 || self.frames == 0 {
            return bad(format!("grid {}x{}x{} is too small", self.height, self.width, self.frames));
        }
        let r = &self.ring;
        if !(0.0..1.0).contains(&r.contraction) {
            return bad(format!("contraction {} must lie in [0, 1)", r.contraction));
        }
        if !(r.radius > 0.0 && r.thickness > 0.0) {
            return bad("ring radius and thickness must be positive".into());
        }
        if r.radius * (1.0 - r.contraction) - r.thickness / 2.0 <= 0.0 {
            return bad("ring interior collapses at peak contraction".into());
        }
        let outer = r.radius + r.thickness / 2.0;
        if r.center.iter().any(|c| c.abs() + outer > 0.5) {
            return bad("ring leaves the field of view".into());
        }
        for (i, e) in self.ellipses.iter().enumerate() {
            if !(e.axes[0] > 0.0 && e.axes[1] > 0.0) {
                return bad(format!("ellipse {i} has non-positive axes"));
            }
            let reach = e.axes[0].max(e.axes[1]);
            if e.center.iter().any(|c| c.abs() + reach > 0.5) {
                return bad(format!("ellipse {i} leaves the field of view"));
            }
        }
        let finite = r.wall.iter().chain(&r.pool).chain(r.center.iter()).all(|v| v.is_finite())
            && r.pool_modulation.is_finite()
            && self.phase.iter().all(|v| v.is_finite())
            && self.ellipses.iter().all(|e| {
                e.amplitude.iter().chain(&e.center).chain(&e.axes).all(|v| v.is_finite())
                    && e.angle.is_finite()
                    && e.modulation.is_finite()
            });
        if !finite {
            return bad("non-finite phantom parameter".into());
        }
        Ok(())
    }

    /// Wall midline radius at frame `t`.
    pub fn ring_radius(&self, t: usize) -> f64 {
        let phase = 2.0 * PI * t as f64 / self.frames as f64;
        self.ring.radius * (1.0 - self.ring.contraction * (1.0 - phase.cos()) / 2.0)
    }

    fn pixel_size(&self) -> f64 {
        1.0 / self.height.max(self.width) as f64
    }

    /// Continuous phantom value at normalized position `r` in frame `t`.
    pub fn value_at(&self, r: [f64; 2], t: usize) -> Complex64 {
        let edge = EDGE_WIDTH_PX * self.pixel_size();
        let cycle = (2.0 * PI * t as f64 / self.frames as f64).sin();
        let c = |a: [f64; 2]| Complex64::new(a[0], a[1]);

        let mut v = Complex64::new(0.0, 0.0);
        for e in &self.ellipses {
            let inside = soft_inside(ellipse_distance(r, e.center, e.axes, e.angle), edge);
            v += c(e.amplitude) * (1.0 + e.modulation * cycle) * inside;
        }
        let ring = &self.ring;
        let rho = (r[0] - ring.center[0]).hypot(r[1] - ring.center[1]);
        let mid = self.ring_radius(t);
        let inner = soft_inside(rho - (mid - ring.thickness / 2.0), edge);
        let outer = soft_inside(rho - (mid + ring.thickness / 2.0), edge);
        v += c(ring.pool) * (1.0 + ring.pool_modulation * cycle) * inner;
        v += c(ring.wall) * (outer - inner);

        let [c0, cx, cy, cxx, cxy, cyy] = self.phase;
        let (x, y) = (r[0], r[1]);
        v * Complex64::from_polar(1.0, c0 + cx * x + cy * y + cxx * x * x + cxy * x * y + cyy * y * y)
    }
}

/// `1` well inside, `0` well outside, smoothstep across `width` centered on
/// the boundary. `d` is a signed distance, negative inside.
fn soft_inside(d: f64, width: f64) -> f64 {
    let s = (0.5 - d / width).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// First-order signed distance to an ellipse boundary.
fn ellipse_distance(r: [f64; 2], center: [f64; 2], axes: [f64; 2], angle: f64) -> f64 {
    let (s, c) = angle.sin_cos();
    let (dx, dy) = (r[0] - center[0], r[1] - center[1]);
    let qx = c * dx + s * dy;
    let qy = -s * dx + c * dy;
    let (ax, ay) = (axes[0], axes[1]);
    let rho = ((qx / ax).powi(2) + (qy / ay).powi(2)).sqrt();
    if rho == 0.0 {
        return -ax.min(ay);
    }
    let grad = ((qx / (ax * ax)).powi(2) + (qy / (ay * ay)).powi(2)).sqrt() / rho;
    (rho - 1.0) / grad
}

/// Ground-truth cine sampled at pixel centers.
pub fn render_phantom(spec: &PhantomSpec) -> Result<CineImage> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut x = CineImage::zeros(h, w, spec.frames);
    for t in 0..spec.frames {
        let frame = x.frame_mut(t);
        for i in 0..h {
            for j in 0..w {
                frame[i * w + j] = spec.value_at([pixel_center(j, w), pixel_center(i, h)], t);
            }
        }
    }
    Ok(x)
}

/// Smooth Gaussian-lobe coil profiles centered outside the field of view,
/// with seeded linear phase ramps, normalized to unit root-sum-of-squares.
pub fn make_coils(coils: usize, height: usize, width: usize, seed: u64) -> Result<CoilMaps> {
    if coils == 0 {
        return Err(Error::InvalidConfig("at least one coil is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ramp = Normal::new(0.0, 0.5).expect("valid normal");
    let (radius, width_sd) = (0.75, 0.5);
    let n = height * width;
    let mut data = vec![Complex64::new(0.0, 0.0); coils * n];
    for j in 0..coils {
        let angle = 2.0 * PI * j as f64 / coils as f64;
        let center = [radius * angle.cos(), radius * angle.sin()];
        let offset = rng.random_range(0.0..2.0 * PI);
        let slope = [ramp.sample(&mut rng), ramp.sample(&mut rng)];
        for i in 0..height {
            for k in 0..width {
                let (x, y) = (pixel_center(k, width), pixel_center(i, height));
                let d2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                let mag = (-d2 / (2.0 * width_sd * width_sd)).exp();
                let phase = offset + 2.0 * PI * (slope[0] * x + slope[1] * y);
                data[j * n + i * width + k] = Complex64::from_polar(mag, phase);
            }
        }
    }
    for p in 0..n {
        let rss = (0..coils).map(|j| data[j * n + p].norm_sqr()).sum::<f64>().sqrt();
        for j in 0..coils {
            data[j * n + p] /= rss;
        }
    }
    Ok(CoilMaps {
        coils,
        height,
        width,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    UniformRandom,
    VariableDensity,
    RadialPoints,
}

impl MaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskKind::UniformRandom => "uniform-random",
            MaskKind::VariableDensity => "variable-density",
            MaskKind::RadialPoints => "radial-points",
        }
    }
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-random" => Ok(MaskKind::UniformRandom),
            "variable-density" => Ok(MaskKind::VariableDensity),
            "radial-points" => Ok(MaskKind::RadialPoints),
            other => Err(Error::InvalidConfig(format!("unknown mask kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub accel: f64,
    /// Center phase-encode lines always acquired (Cartesian kinds).
    pub acs_lines: usize,
    /// Spokes per frame (radial kind); derived from `accel` when absent.
    pub spokes: Option<usize>,
    pub seed: u64,
}

/// Line-count standard deviation of the variable-density profile, as a
/// fraction of the phase-encode count.
const VD_SIGMA_FRACTION: f64 = 0.2;

pub fn make_mask(spec: &MaskSpec, frames: usize, height: usize, width: usize) -> Result<SamplingPattern> {
    if !(spec.accel >= 1.0) {
        return Err(Error::InvalidConfig(format!("acceleration {} must be at least 1", spec.accel)));
    }
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidConfig("mask dims must be positive".into()));
    }
    match spec.kind {
        MaskKind::UniformRandom | MaskKind::VariableDensity => cartesian_lines(spec, frames, height, width),
        MaskKind::RadialPoints => Ok(radial_points(spec, frames, height, width)),
    }
}

fn cartesian_lines(spec: &MaskSpec, frames: usize, height: usize, width: usize) -> Result<SamplingPattern> {
    let lines = ((height as f64 / spec.accel).round() as usize).max(1);
    if spec.acs_lines > lines {
        return Err(Error::InvalidConfig(format!(
            "{} ACS lines exceed the {lines} lines allowed at R = {}",
            spec.acs_lines, spec.accel
        )));
    }
    let acs_start = height / 2 - spec.acs_lines / 2;
    let acs = acs_start..acs_start + spec.acs_lines;
    let candidates: Vec<usize> = (0..height).filter(|r| !acs.contains(r)).collect();
    let extra = lines - spec.acs_lines;
    let sigma = VD_SIGMA_FRACTION * height as f64;
    let mut mask = vec![false; frames * height * width];
    for t in 0..frames {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(t as u64));
        let picked: Vec<usize> = match spec.kind {
            MaskKind::UniformRandom => index::sample(&mut rng, candidates.len(), extra).into_vec(),
            _ => index::sample_weighted(
                &mut rng,
                candidates.len(),
                |i| {
                    let ky = frequency_of_index(candidates[i], height);
                    (-ky * ky / (2.0 * sigma * sigma)).exp()
                },
                extra,
            )
            .map_err(|e| Error::InvalidConfig(format!("variable-density weights: {e}")))?
            .into_vec(),
        };
        let rows = acs.clone().chain(picked.into_iter().map(|i| candidates[i]));
        for row in rows {
            let base = t * height * width + row * width;
            mask[base..base + width].iter_mut().for_each(|m| *m = true);
        }
    }
    Ok(SamplingPattern::Cartesian {
        frames,
        height,
        width,
        mask,
    })
}

/// Spokes per frame for a target acceleration: `pi/2 * N / R`.
pub fn spokes_for_accel(accel: f64, height: usize, width: usize) -> usize {
    ((PI / 2.0 * height.max(width) as f64 / accel).round() as usize).max(1)
}

/// Diametral golden-angle spokes with unit radial spacing, clipped to the
/// Nyquist box.
fn radial_points(spec: &MaskSpec, frames: usize, height: usize, width: usize) -> SamplingPattern {
    let spokes = spec.spokes.unwrap_or_else(|| spokes_for_accel(spec.accel, height, width));
    let step = GOLDEN_ANGLE_DEG.to_radians();
    let (nx, ny) = (width as f64 / 2.0, height as f64 / 2.0);
    let reach = nx.max(ny) as i64;
    let points = (0..frames)
        .map(|t| {
            let mut frame = Vec::new();
            for s in 0..spokes {
                let angle = (t * spokes + s) as f64 * step;
                let (sin, cos) = angle.sin_cos();
                for k in -reach..=reach {
                    let p = [k as f64 * cos, k as f64 * sin];
                    if p[0].abs() <= nx && p[1].abs() <= ny {
                        frame.push(p);
                    }
                }
            }
            frame
        })
        .collect();
    SamplingPattern::Points { points }
}

/// Noise standard deviation per real component that yields `snr_db`
/// measured as `20 log10(rms|y| / (sigma sqrt 2))`.
pub fn noise_std_for_snr(clean: &Samples, snr_db: f64) -> f64 {
    let rms = (clean.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / clean.data.len() as f64).sqrt();
    rms / (2f64.sqrt() * 10f64.powf(snr_db / 20.0))
}

pub fn add_noise(samples: &mut Samples, noise_std: f64, seed: u64) -> Result<()> {
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise std {noise_std} must be non-negative")));
    }
    if noise_std == 0.0 {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std).expect("valid normal");
    for z in samples.data.iter_mut() {
        *z += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
    }
    Ok(())
}

/// Renders the phantom, applies the forward model and adds seeded noise.
pub fn simulate(
    spec: &PhantomSpec,
    coils: &CoilMaps,
    pattern: &SamplingPattern,
    noise_std: f64,
    seed: u64,
) -> Result<KSpaceDataset> {
    let reference = render_phantom(spec)?;
    let op = ForwardModel::new(coils, pattern)?;
    let mut samples = op.forward(&reference)?;
    add_noise(&mut samples, noise_std, seed)?;
    let dataset = KSpaceDataset {
        height: spec.height,
        width: spec.width,
        frames: spec.frames,
        pattern: pattern.clone(),
        coils: coils.clone(),
        samples,
        noise_std,
        reference: Some(reference),
    };
    dataset.validate()?;
    Ok(dataset)
}
