//! Numerical self-checks: end-to-end finite differences of the composite
//! loss and dot tests of the forward operator.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{CineImage, ForwardModel, KSpaceDataset, PatternKind, Samples, SamplingPattern};
use crate::optim::{loss_value, total_loss, LossWeights};
use crate::phantom::{make_coils, make_mask, MaskKind, MaskSpec};
use crate::primitive::Modulation;
use crate::temporal::{GaborParams, GridDims, ParamGroup, PrimitiveSet, TemporalBases};

/// Pass threshold for the data-only gradient check.
pub const GRAD_TOL_DATA: f64 = 1e-4;
/// Pass threshold with the regularizers on.
pub const GRAD_TOL_FULL: f64 = 1e-3;
/// Pass threshold for the adjoint dot tests.
pub const ADJOINT_TOL: f64 = 1e-10;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub seed: u64,
    pub primitives: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub coils: usize,
    pub rank_geom: usize,
    pub rank_contrast: usize,
    pub mode: Modulation,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            primitives: 10,
            height: 8,
            width: 8,
            frames: 3,
            coils: 2,
            rank_geom: 2,
            rank_contrast: 2,
            mode: Modulation::Gabor,
        }
    }
}

/// Seeded random model and dataset. Primitives are wide enough that their
/// 3-sigma boxes stay clear of pixel centers under small perturbations.
pub fn random_instance(spec: &InstanceSpec) -> Result<(PrimitiveSet, KSpaceDataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w, frames) = (spec.height, spec.width, spec.frames);
    let (rg, rc) = (spec.rank_geom, spec.rank_contrast);
    let mut bases = TemporalBases::initial(frames, rg, rc, &mut rng)?;
    for v in bases.geom.iter_mut() {
        *v += rng.random_range(-0.2..0.2);
    }
    for z in bases.contrast.iter_mut() {
        *z += Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    }
    let xi_range = 0.3 * w.min(h) as f64;
    let items = (0..spec.primitives)
        .map(|_| {
            let mut p = GaborParams::zeros(rg, rc);
            p.mu = [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)];
            p.theta = rng.random_range(-1.5..1.5);
            p.log_s = [rng.random_range(-2.3f64..-1.4), rng.random_range(-2.3f64..-1.4)];
            if spec.mode == Modulation::Gabor {
                p.xi = [rng.random_range(-xi_range..xi_range), rng.random_range(-xi_range..xi_range)];
            }
            for d in 0..2 {
                for r in 0..rg {
                    p.coeff_mu[d][r] = rng.random_range(-0.05..0.05);
                    p.coeff_logs[d][r] = rng.random_range(-0.1..0.1);
                    if spec.mode == Modulation::Gabor {
                        p.coeff_xi[d][r] = rng.random_range(-0.5..0.5);
                    }
                }
            }
            for r in 0..rg {
                p.coeff_theta[r] = rng.random_range(-0.2..0.2);
            }
            for z in p.u.iter_mut().chain(p.coeff_w.iter_mut()) {
                *z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            p
        })
        .collect();
    let set = PrimitiveSet::new(items, bases, GridDims { height: h, width: w }, spec.mode)?;

    let coils = make_coils(spec.coils, h, w, spec.seed.wrapping_add(1))?;
    let mask = MaskSpec {
        kind: MaskKind::UniformRandom,
        accel: 2.0,
        acs_lines: 2,
        spokes: None,
        seed: spec.seed.wrapping_add(2),
    };
    let pattern = make_mask(&mask, frames, h, w)?;
    let offsets = pattern.frame_offsets();
    let mut samples = Samples::zeros(spec.coils, offsets);
    for z in samples.data.iter_mut() {
        *z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    let dataset = KSpaceDataset {
        height: h,
        width: w,
        frames,
        pattern,
        coils,
        samples,
        noise_std: 0.0,
        reference: None,
    };
    dataset.validate()?;
    Ok((set, dataset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub step: f64,
    pub checked: usize,
    /// Max relative error per parameter group.
    pub per_group: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Smallest `|w_{n,t}|` and `|x_{t+1} - x_t|` over the instance.
    pub min_weight_abs: f64,
    pub min_frame_diff_abs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub weights: LossWeights,
    pub step: f64,
    pub tolerance: f64,
    /// Negates one analytic derivative; the check must then fail.
    pub mutate: bool,
}

impl GradcheckOptions {
    pub fn data_only() -> Self {
        Self {
            weights: LossWeights::data_only(),
            step: 1e-6,
            tolerance: GRAD_TOL_DATA,
            mutate: false,
        }
    }

    pub fn regularized(lambda_s: f64, lambda_t: f64) -> Self {
        Self {
            weights: LossWeights {
                lambda_s,
                lambda_t,
                eps_abs: 1e-8,
            },
            step: 1e-6,
            tolerance: GRAD_TOL_FULL,
            mutate: false,
        }
    }
}

fn total(set: &PrimitiveSet, op: &ForwardModel, y: &Samples, weights: &LossWeights) -> Result<f64> {
    let (d, s, t) = loss_value(set, op, y, weights)?;
    Ok(d + s + t)
}

/// Central differences on every learnable scalar of the instance.
pub fn gradcheck(set: &PrimitiveSet, dataset: &KSpaceDataset, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let op = ForwardModel::for_dataset(dataset)?;
    let y = &dataset.samples;
    let eval = total_loss(set, &op, y, &opts.weights)?;
    let mut analytic = eval.gradient;
    if opts.mutate {
        analytic.items[0].theta = -analytic.items[0].theta;
    }

    let min_weight_abs = set.weight_matrix()?.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let x = &eval.rendered;
    let n = x.frame_len();
    let min_frame_diff_abs = (0..x.frames.saturating_sub(1))
        .flat_map(|t| (0..n).map(move |p| (t, p)))
        .map(|(t, p)| (x.data[(t + 1) * n + p] - x.data[t * n + p]).norm())
        .fold(f64::INFINITY, f64::min);

    let mut per_group: BTreeMap<String, f64> = BTreeMap::new();
    let mut record = |group: ParamGroup, err: f64| {
        let e = per_group.entry(group.name().to_string()).or_insert(0.0);
        *e = e.max(err);
    };
    let h = opts.step;
    let mut checked = 0;
    let frozen_xi = set.modulation == Modulation::Gaussian;

    for (i, p) in set.items.iter().enumerate() {
        let base = p.flatten();
        let groups = p.groups();
        let grads = analytic.items[i].flatten();
        for k in 0..base.len() {
            if frozen_xi && is_carrier_slot(k, set.bases.rank_geom) {
                continue;
            }
            let mut probe = set.clone();
            let mut v = base.clone();
            v[k] = base[k] + h;
            probe.items[i].unflatten(&v);
            let plus = total(&probe, &op, y, &opts.weights)?;
            v[k] = base[k] - h;
            probe.items[i].unflatten(&v);
            let minus = total(&probe, &op, y, &opts.weights)?;
            record(groups[k], relative_error((plus - minus) / (2.0 * h), grads[k]));
            checked += 1;
        }
    }
    let base = set.bases.flatten();
    let grads = analytic.bases.flatten();
    for k in 0..base.len() {
        let mut probe = set.clone();
        let mut v = base.clone();
        v[k] = base[k] + h;
        probe.bases.unflatten(&v);
        let plus = total(&probe, &op, y, &opts.weights)?;
        v[k] = base[k] - h;
        probe.bases.unflatten(&v);
        let minus = total(&probe, &op, y, &opts.weights)?;
        record(ParamGroup::Bases, relative_error((plus - minus) / (2.0 * h), grads[k]));
        checked += 1;
    }

    let max_rel_error = per_group.values().copied().fold(0.0, f64::max);
    if !max_rel_error.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: 0,
            data: eval.data,
            sparsity: eval.sparsity,
            tv: eval.tv,
        });
    }
    Ok(GradcheckReport {
        lambda_s: opts.weights.lambda_s,
        lambda_t: opts.weights.lambda_t,
        step: h,
        checked,
        per_group,
        max_rel_error,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance,
        min_weight_abs,
        min_frame_diff_abs,
    })
}

/// Carrier and carrier-coefficient slots of the flat primitive layout.
fn is_carrier_slot(k: usize, rank_geom: usize) -> bool {
    let coeff_xi = 7 + 5 * rank_geom;
    k == 5 || k == 6 || (coeff_xi..coeff_xi + 2 * rank_geom).contains(&k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointReport {
    pub kind: PatternKind,
    pub trials: usize,
    pub max_rel_discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random per-frame point sets inside the Nyquist box.
pub fn random_points(frames: usize, height: usize, width: usize, per_frame: usize, seed: u64) -> SamplingPattern {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nx, ny) = (width as f64 / 2.0, height as f64 / 2.0);
    SamplingPattern::Points {
        points: (0..frames)
            .map(|_| {
                (0..per_frame)
                    .map(|_| [rng.random_range(-nx..=nx), rng.random_range(-ny..=ny)])
                    .collect()
            })
            .collect(),
    }
}

fn random_complex(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
    (0..len)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// `trials` seeded tests of `<A x, y> = <x, A^H y>`.
pub fn adjoint_check(
    kind: PatternKind,
    height: usize,
    width: usize,
    frames: usize,
    coils: usize,
    trials: usize,
    seed: u64,
) -> Result<AdjointReport> {
    let maps = make_coils(coils, height, width, seed)?;
    let pattern = match kind {
        PatternKind::CartesianMask => make_mask(
            &MaskSpec {
                kind: MaskKind::UniformRandom,
                accel: 2.0,
                acs_lines: 2.min(height / 2),
                spokes: None,
                seed,
            },
            frames,
            height,
            width,
        )?,
        PatternKind::PointSet => random_points(frames, height, width, height * width / 3 + 1, seed),
    };
    let op = ForwardModel::new(&maps, &pattern)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = CineImage {
            height,
            width,
            frames,
            data: random_complex(&mut rng, height * width * frames),
        };
        let mut y = Samples::zeros(coils, pattern.frame_offsets());
        y.data = random_complex(&mut rng, y.data.len());
        let lhs = op.forward(&x)?.inner(&y);
        let ahy = op.adjoint(&y)?;
        let rhs: Complex64 = x.data.iter().zip(&ahy.data).map(|(a, b)| a.conj() * b).sum();
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(rhs.norm()));
    }
    Ok(AdjointReport {
        kind,
        trials,
        max_rel_discrepancy: worst,
        tolerance: ADJOINT_TOL,
        passed: worst < ADJOINT_TOL,
    })
}
