//! Initialization and the Adam fitting loop with density control.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, cosine_lr, Moments};
use super::config::FitConfig;
use super::density::{density_control, percentile, DensityRules, SlotOrigin};
use super::loss::{loss_value, render_all, total_loss, LossWeights};
use crate::error::{Error, Result};
use crate::forward::{ForwardModel, KSpaceDataset};
use crate::metrics::{MetricReport, DEFAULT_BANDS};
use crate::primitive::Modulation;
use crate::temporal::{GaborParams, GridDims, ParamGroup, PrimitiveSet, TemporalBases};

/// Lattice initialization: `ceil(sqrt(n))` per side, row-major, truncated to
/// `n_init`; isotropic scale equal to the lattice spacing; static start.
pub fn init_primitives(config: &FitConfig, grid: GridDims, frames: usize) -> Result<PrimitiveSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bases = TemporalBases::initial(frames, config.rank_geom, config.rank_contrast, &mut rng)?;
    let n = config.n_init;
    let side = (n as f64).sqrt().ceil() as usize;
    let spacing = 1.0 / side as f64;
    let xi_dist = Normal::new(0.0, config.xi_init_std)
        .map_err(|e| Error::InvalidConfig(format!("xi_init_std: {e}")))?;
    let items = (0..n)
        .map(|i| {
            let (row, col) = (i / side, i % side);
            let mut p = GaborParams::zeros(config.rank_geom, config.rank_contrast);
            p.mu = [(col as f64 + 0.5) * spacing - 0.5, (row as f64 + 0.5) * spacing - 0.5];
            p.log_s = [spacing.ln(); 2];
            if config.mode == Modulation::Gabor {
                p.xi = [xi_dist.sample(&mut rng), xi_dist.sample(&mut rng)];
            }
            p.u[0] = crate::Complex64::new(1.0, 0.0);
            p
        })
        .collect();
    PrimitiveSet::new(items, bases, grid, config.mode)
}

/// One density-control event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEvent {
    pub iteration: usize,
    pub pruned: usize,
    pub split: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Loss components at each iteration, evaluated before its update.
    pub data: Vec<f64>,
    pub sparsity: Vec<f64>,
    pub tv: Vec<f64>,
    pub counts: Vec<usize>,
    pub density_events: Vec<DensityEvent>,
    pub split_threshold: Option<f64>,
    /// Loss components of the returned model.
    pub final_loss: [f64; 3],
    pub final_count: usize,
    pub wall_time_s: f64,
    pub metrics: Option<MetricReport>,
    pub config: FitConfig,
}

/// Progress snapshot passed to a fit observer.
#[derive(Debug, Clone, Copy)]
pub struct IterationInfo {
    pub iteration: usize,
    pub data: f64,
    pub sparsity: f64,
    pub tv: f64,
    pub count: usize,
}

pub fn fit(dataset: &KSpaceDataset, config: &FitConfig) -> Result<(PrimitiveSet, FitReport)> {
    fit_observed(dataset, config, |_| {})
}

/// [`fit`] with a callback after every loss evaluation.
pub fn fit_observed(
    dataset: &KSpaceDataset,
    config: &FitConfig,
    mut observer: impl FnMut(&IterationInfo),
) -> Result<(PrimitiveSet, FitReport)> {
    let start = Instant::now();
    config.validate()?;
    dataset.validate()?;
    let grid = GridDims {
        height: dataset.height,
        width: dataset.width,
    };
    let mut ps = init_primitives(config, grid, dataset.frames)?;
    let op = ForwardModel::for_dataset(dataset)?;
    let y = &dataset.samples;
    let weights = LossWeights {
        lambda_s: config.lambda_s,
        lambda_t: config.lambda_t,
        eps_abs: config.eps_abs,
    };

    let layout = GaborParams::zeros(config.rank_geom, config.rank_contrast).groups();
    let per_len = layout.len();
    let frozen = frozen_slots(config.mode, config.rank_geom, per_len);
    let mut moments: Vec<Moments> = (0..ps.len()).map(|_| Moments::zeros(per_len)).collect();
    let mut basis_moments = Moments::zeros(ps.bases.flatten().len());
    let limits = ps.limits();

    let mut report = FitReport {
        data: Vec::with_capacity(config.iters),
        sparsity: Vec::with_capacity(config.iters),
        tv: Vec::with_capacity(config.iters),
        counts: Vec::with_capacity(config.iters),
        density_events: Vec::new(),
        split_threshold: None,
        final_loss: [0.0; 3],
        final_count: 0,
        wall_time_s: 0.0,
        metrics: None,
        config: config.clone(),
    };
    let mut grad_accum = vec![0.0; ps.len()];
    let mut accum_steps = 0usize;

    for iteration in 0..config.iters {
        let eval = total_loss(&ps, &op, y, &weights)?;
        if !eval.total().is_finite() || !eval.gradient.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                data: eval.data,
                sparsity: eval.sparsity,
                tv: eval.tv,
            });
        }
        report.data.push(eval.data);
        report.sparsity.push(eval.sparsity);
        report.tv.push(eval.tv);
        report.counts.push(ps.len());
        observer(&IterationInfo {
            iteration,
            data: eval.data,
            sparsity: eval.sparsity,
            tv: eval.tv,
            count: ps.len(),
        });

        for (acc, g) in grad_accum.iter_mut().zip(&eval.gradient.items) {
            *acc += g.mu[0].hypot(g.mu[1]);
        }
        accum_steps += 1;

        let step = iteration as u64 + 1;
        let rates: Vec<f64> = ParamGroup::ALL
            .iter()
            .map(|&g| cosine_lr(config.lr.for_group(g), config.lr_final_fraction, iteration, config.iters))
            .collect();
        let rate_of = |g: ParamGroup| rates[ParamGroup::ALL.iter().position(|&x| x == g).unwrap()];
        let slot_rates: Vec<f64> = layout
            .iter()
            .enumerate()
            .map(|(i, &g)| if frozen[i] { 0.0 } else { rate_of(g) })
            .collect();

        for ((p, g), m) in ps.items.iter_mut().zip(&eval.gradient.items).zip(moments.iter_mut()) {
            let mut values = p.flatten();
            let mut grads = g.flatten();
            for (gv, &f) in grads.iter_mut().zip(&frozen) {
                if f {
                    *gv = 0.0;
                }
            }
            adam_step(&mut values, &grads, m, step, &config.adam, |i| slot_rates[i]);
            p.unflatten(&values);
            for d in 0..2 {
                p.xi[d] = p.xi[d].clamp(-limits.xi_max[d], limits.xi_max[d]);
                p.log_s[d] = p.log_s[d].max(limits.log_s_min);
            }
        }
        let mut basis_values = ps.bases.flatten();
        let basis_rate = rate_of(ParamGroup::Bases);
        adam_step(
            &mut basis_values,
            &eval.gradient.bases.flatten(),
            &mut basis_moments,
            step,
            &config.adam,
            |_| basis_rate,
        );
        ps.bases.unflatten(&basis_values);

        let completed = iteration + 1;
        if config.density_due(completed) {
            let mean_grad: Vec<f64> = grad_accum.iter().map(|v| v / accum_steps as f64).collect();
            let threshold = *report
                .split_threshold
                .get_or_insert_with(|| percentile(&mean_grad, config.density.split_percentile));
            let mean_abs_w = mean_weight_magnitudes(&ps)?;
            let rules = DensityRules {
                prune_fraction: config.density.prune_fraction,
                split_threshold: threshold,
                split_shrink: config.density.split_shrink,
                min_count: config.n_init,
                max_count: config.n_max,
            };
            let outcome = density_control(&mut ps, &mean_grad, &mean_abs_w, &rules);
            moments = outcome
                .origins
                .iter()
                .map(|o| match *o {
                    SlotOrigin::Kept(i) => moments[i].clone(),
                    SlotOrigin::Child(_) => Moments::zeros(per_len),
                })
                .collect();
            report.density_events.push(DensityEvent {
                iteration: completed,
                pruned: outcome.pruned,
                split: outcome.split,
                count: ps.len(),
            });
        }
        // Statistics cover the latest interval only, so the first event is not
        // dominated by the initial transient.
        if completed % config.density.interval == 0 {
            grad_accum = vec![0.0; ps.len()];
            accum_steps = 0;
        }
    }

    if config.mode == Modulation::Gaussian {
        debug_assert!(ps.items.iter().all(|p| p.xi == [0.0; 2]));
    }
    let (data, sparsity, tv) = loss_value(&ps, &op, y, &weights)?;
    if !(data + sparsity + tv).is_finite() || !ps.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: config.iters,
            data,
            sparsity,
            tv,
        });
    }
    report.final_loss = [data, sparsity, tv];
    report.final_count = ps.len();
    if let Some(reference) = &dataset.reference {
        let recon = render_all(&ps)?;
        report.metrics = Some(MetricReport::compute(&recon, reference, DEFAULT_BANDS)?);
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((ps, report))
}

/// `mean_t |w_{n,t}|` for every primitive.
pub fn mean_weight_magnitudes(ps: &PrimitiveSet) -> Result<Vec<f64>> {
    let frames = ps.frames();
    let w = ps.weight_matrix()?;
    Ok(w.chunks_exact(frames).map(|row| row.iter().map(|z| z.norm()).sum::<f64>() / frames as f64).collect())
}

/// Flat slots that never move: the carrier and its coefficients in
/// Gaussian mode.
fn frozen_slots(mode: Modulation, rank_geom: usize, len: usize) -> Vec<bool> {
    let mut frozen = vec![false; len];
    if mode == Modulation::Gaussian {
        // Layout: mu(2) theta(1) log_s(2) xi(2) | coeff_mu(2Rg) coeff_theta(Rg) coeff_logs(2Rg) coeff_xi(2Rg) | ...
        frozen[5] = true;
        frozen[6] = true;
        let start = 7 + 5 * rank_geom;
        frozen[start..start + 2 * rank_geom].iter_mut().for_each(|f| *f = true);
    }
    frozen
}
