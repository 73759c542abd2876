//! Adaptive density control: prune primitives whose mean weight magnitude
//! is negligible and split those with large accumulated position gradients.

use crate::temporal::{GaborParams, PrimitiveSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityRules {
    /// Prune when mean |w| < `prune_fraction * median(mean |w|)`.
    pub prune_fraction: f64,
    /// Split when the accumulated position-gradient norm exceeds this.
    pub split_threshold: f64,
    pub split_shrink: f64,
    pub min_count: usize,
    pub max_count: usize,
}

/// Where a slot of the updated set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOrigin {
    Kept(usize),
    Child(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensityOutcome {
    pub origins: Vec<SlotOrigin>,
    pub pruned: usize,
    pub split: usize,
}

/// Two children displaced by half the major scale along the major axis,
/// with shrunken scales and halved weight coefficients.
pub fn split_primitive(p: &GaborParams, shrink: f64) -> [GaborParams; 2] {
    let scales = [p.log_s[0].exp(), p.log_s[1].exp()];
    let (sin, cos) = p.theta.sin_cos();
    let (major, dir) = if scales[0] >= scales[1] {
        (scales[0], [cos, sin])
    } else {
        (scales[1], [-sin, cos])
    };
    let offset = [0.5 * major * dir[0], 0.5 * major * dir[1]];
    let shrink_log = shrink.ln();
    let child = |sign: f64| {
        let mut c = p.clone();
        c.mu = [p.mu[0] + sign * offset[0], p.mu[1] + sign * offset[1]];
        c.log_s = [p.log_s[0] - shrink_log, p.log_s[1] - shrink_log];
        c.u.iter_mut().for_each(|z| *z *= 0.5);
        c.coeff_w.iter_mut().for_each(|z| *z *= 0.5);
        c
    };
    [child(1.0), child(-1.0)]
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Nearest-rank percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Applies one prune/split event. The result keeps
/// `min_count <= len <= max_count` whenever the input did.
pub fn density_control(
    ps: &mut PrimitiveSet,
    accumulated_grad: &[f64],
    mean_abs_w: &[f64],
    rules: &DensityRules,
) -> DensityOutcome {
    let n = ps.len();
    debug_assert_eq!(accumulated_grad.len(), n);
    debug_assert_eq!(mean_abs_w.len(), n);

    let cutoff = rules.prune_fraction * median(mean_abs_w);
    let mut prune: Vec<usize> = (0..n).filter(|&i| mean_abs_w[i] < cutoff || mean_abs_w[i] == 0.0).collect();
    prune.sort_by(|&a, &b| mean_abs_w[a].total_cmp(&mean_abs_w[b]).then(a.cmp(&b)));

    let mut split: Vec<usize> = (0..n)
        .filter(|&i| accumulated_grad[i] > rules.split_threshold)
        .collect();
    split.sort_by(|&a, &b| accumulated_grad[b].total_cmp(&accumulated_grad[a]).then(a.cmp(&b)));

    // Never drop below the floor, never exceed the cap.
    let headroom = |pruned: usize| (rules.max_count + pruned).saturating_sub(n);
    split.retain(|i| !prune.contains(i));
    let mut prune_count = prune.len();
    let mut split_count;
    loop {
        split_count = split.len().min(headroom(prune_count));
        let allowed = prune_count.min((n + split_count).saturating_sub(rules.min_count));
        if allowed == prune_count {
            break;
        }
        prune_count = allowed;
    }
    prune.truncate(prune_count);
    split.truncate(split_count);

    let mut items = Vec::with_capacity(n - prune.len() + split.len());
    let mut origins = Vec::with_capacity(items.capacity());
    for (i, p) in ps.items.iter().enumerate() {
        if prune.contains(&i) {
            continue;
        }
        if split.contains(&i) {
            for child in split_primitive(p, rules.split_shrink) {
                items.push(child);
                origins.push(SlotOrigin::Child(i));
            }
        } else {
            items.push(p.clone());
            origins.push(SlotOrigin::Kept(i));
        }
    }
    ps.items = items;
    DensityOutcome {
        origins,
        pruned: prune.len(),
        split: split.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitive::Modulation;
    use crate::temporal::{GridDims, TemporalBases};
    use num_complex::Complex64;

    fn set(n: usize) -> PrimitiveSet {
        let mut bases = TemporalBases::zeros(2, 1, 1);
        bases.contrast = vec![Complex64::new(1.0, 0.0); 2];
        let items = (0..n)
            .map(|i| {
                let mut p = GaborParams::zeros(1, 1);
                p.mu = [i as f64 * 0.01 - 0.2, 0.0];
                p.log_s = [(0.04f64).ln(), (0.02f64).ln()];
                p.u[0] = Complex64::new(1.0, 0.0);
                p
            })
            .collect();
        PrimitiveSet::new(items, bases, GridDims { height: 32, width: 32 }, Modulation::Gabor).unwrap()
    }

    fn rules(min: usize, max: usize, thr: f64) -> DensityRules {
        DensityRules {
            prune_fraction: 0.05,
            split_threshold: thr,
            split_shrink: 1.6,
            min_count: min,
            max_count: max,
        }
    }

    #[test]
    fn no_candidates_is_noop() {
        let mut ps = set(6);
        let before = ps.clone();
        let out = density_control(&mut ps, &[0.1; 6], &[1.0; 6], &rules(6, 10, 1.0));
        assert_eq!(ps, before);
        assert_eq!((out.pruned, out.split), (0, 0));
    }

    #[test]
    fn zero_weight_is_pruned() {
        let mut ps = set(5);
        let w = [1.0, 1.0, 0.0, 1.0, 1.0];
        let out = density_control(&mut ps, &[0.0; 5], &w, &rules(1, 10, 1.0));
        assert_eq!(ps.len(), 4);
        assert_eq!(out.pruned, 1);
        assert!(!out.origins.contains(&SlotOrigin::Kept(2)));
    }

    #[test]
    fn splits_respect_cap_and_order() {
        let mut ps = set(4);
        let grads = [5.0, 0.0, 9.0, 7.0];
        let out = density_control(&mut ps, &grads, &[1.0; 4], &rules(4, 6, 1.0));
        assert_eq!(ps.len(), 6);
        assert_eq!(out.split, 2);
        // highest two gradients (2 and 3) are split
        assert_eq!(
            out.origins,
            vec![
                SlotOrigin::Kept(0),
                SlotOrigin::Kept(1),
                SlotOrigin::Child(2),
                SlotOrigin::Child(2),
                SlotOrigin::Child(3),
                SlotOrigin::Child(3)
            ]
        );
    }

    #[test]
    fn pruning_never_goes_below_floor() {
        let mut ps = set(5);
        let w = [0.0, 0.0, 0.0, 1.0, 1.0];
        density_control(&mut ps, &[0.0; 5], &w, &rules(4, 10, 1.0));
        assert_eq!(ps.len(), 4);
    }

    #[test]
    fn children_geometry() {
        let mut p = GaborParams::zeros(1, 1);
        p.theta = 0.0;
        p.log_s = [(0.08f64).ln(), (0.02f64).ln()];
        p.u[0] = Complex64::new(2.0, -1.0);
        p.coeff_mu = [vec![0.3], vec![0.1]];
        let [a, b] = split_primitive(&p, 1.6);
        assert!((a.mu[0] - 0.04).abs() < 1e-15 && (b.mu[0] + 0.04).abs() < 1e-15);
        assert!((a.log_s[0].exp() - 0.05).abs() < 1e-15);
        assert_eq!(a.u[0], Complex64::new(1.0, -0.5));
        assert_eq!(a.coeff_mu, p.coeff_mu);
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&v, 1.0), 20.0);
        assert_eq!(percentile(&v, 0.0), 1.0);
    }
}
