#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gabor_cine::primitive::{Covariance2, FrameGeometry, Modulation};
use gabor_cine::temporal::{GaborParams, GridDims, PrimitiveSet, TemporalBases};
use gabor_cine::Complex64;

pub fn complex(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

pub fn random_geometry(rng: &mut ChaCha8Rng) -> FrameGeometry {
    FrameGeometry {
        mu: [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)],
        cov: Covariance2 {
            theta: rng.random_range(0.0..PI),
            log_s: [rng.random_range(-3.5..-1.5), rng.random_range(-3.5..-1.5)],
        },
        xi: [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)],
        w: complex(rng, 1.0),
    }
}

pub struct SetShape {
    pub n: usize,
    pub frames: usize,
    pub rank_geom: usize,
    pub rank_contrast: usize,
    pub height: usize,
    pub width: usize,
    pub modulation: Modulation,
}

/// Random set with nonzero temporal coefficients everywhere.
pub fn random_set(shape: &SetShape, seed: u64) -> PrimitiveSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rg, rc) = (shape.rank_geom, shape.rank_contrast);
    let mut bases = TemporalBases::initial(shape.frames, rg, rc, &mut rng).unwrap();
    bases.geom.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
    bases.contrast.iter_mut().for_each(|z| *z += complex(&mut rng, 0.2));
    let items = (0..shape.n)
        .map(|_| {
            let mut p = GaborParams::zeros(rg, rc);
            p.mu = [rng.random_range(-0.35..0.35), rng.random_range(-0.35..0.35)];
            p.theta = rng.random_range(0.0..PI);
            p.log_s = [rng.random_range(-3.0..-2.0), rng.random_range(-3.0..-2.0)];
            if shape.modulation == Modulation::Gabor {
                p.xi = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            }
            for row in p.coeff_mu.iter_mut().chain(p.coeff_logs.iter_mut()) {
                row.iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
            }
            p.coeff_theta.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
            if shape.modulation == Modulation::Gabor {
                for row in p.coeff_xi.iter_mut() {
                    row.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
                }
            }
            p.u.iter_mut().for_each(|z| *z = complex(&mut rng, 1.0));
            p.coeff_w.iter_mut().for_each(|z| *z = complex(&mut rng, 0.5));
            p
        })
        .collect();
    PrimitiveSet::new(
        items,
        bases,
        GridDims {
            height: shape.height,
            width: shape.width,
        },
        shape.modulation,
    )
    .unwrap()
}

pub fn max_rel(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max) / scale
}
