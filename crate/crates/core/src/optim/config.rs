use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primitive::Modulation;
use crate::temporal::ParamGroup;

/// Initial Adam step size per parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub mu: f64,
    pub theta: f64,
    pub log_s: f64,
    /// In cycles/FOV per step.
    pub xi: f64,
    /// Intensity and coupling coefficients (`u`, `c_w`, and the geometry `C` blocks).
    pub coefficients: f64,
    pub bases: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mu: 2e-4,
            theta: 1e-3,
            log_s: 2e-3,
            xi: 5e-3,
            coefficients: 5e-3,
            bases: 1e-3,
        }
    }
}

impl LearningRates {
    pub fn for_group(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Mu => self.mu,
            ParamGroup::Theta => self.theta,
            ParamGroup::LogScale => self.log_s,
            ParamGroup::Xi => self.xi,
            ParamGroup::Coefficients => self.coefficients,
            ParamGroup::Bases => self.bases,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive density control schedule and thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityConfig {
    /// Iterations between control events.
    pub interval: usize,
    /// Active window as fractions of the run.
    pub start: f64,
    pub end: f64,
    /// Prune when mean |w| falls below this fraction of the median.
    pub prune_fraction: f64,
    /// Percentile of mean position-gradient norms, taken at the first event,
    /// that fixes the split threshold.
    pub split_percentile: f64,
    /// Children scales are the parent's divided by this factor.
    pub split_shrink: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start: 0.1,
            end: 0.6,
            prune_fraction: 0.05,
            split_percentile: 0.5,
            split_shrink: 1.6,
        }
    }
}

/// Every optimizer, density-control and regularization setting of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub n_init: usize,
    pub n_max: usize,
    pub rank_geom: usize,
    pub rank_contrast: usize,
    pub iters: usize,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub lr: LearningRates,
    /// Learning rates anneal with a cosine to this fraction of their start.
    pub lr_final_fraction: f64,
    pub adam: AdamParams,
    pub density: DensityConfig,
    pub seed: u64,
    pub mode: Modulation,
    /// Smoothing of the L1 terms: `|z| ~ sqrt(|z|^2 + eps^2) - eps`.
    pub eps_abs: f64,
    /// Standard deviation of the initial carrier components, cycles/FOV.
    pub xi_init_std: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_init: 500,
            n_max: 800,
            rank_geom: 6,
            rank_contrast: 4,
            iters: 2000,
            lambda_s: 1e-5,
            lambda_t: 1e-2,
            lr: LearningRates::default(),
            lr_final_fraction: 0.01,
            adam: AdamParams::default(),
            density: DensityConfig::default(),
            seed: 0,
            mode: Modulation::Gabor,
            eps_abs: 1e-8,
            xi_init_std: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_init == 0 {
            return fail("n_init must be at least 1".into());
        }
        if self.n_init > self.n_max {
            return fail(format!("n_init {} exceeds n_max {}", self.n_init, self.n_max));
        }
        if self.rank_contrast == 0 {
            return fail("rank_contrast must be at least 1".into());
        }
        let d = &self.density;
        if !(0.0 < d.start && d.start < 1.0 && 0.0 < d.end && d.end < 1.0 && d.start <= d.end) {
            return fail(format!("density window [{}, {}] must lie inside (0, 1)", d.start, d.end));
        }
        if d.interval == 0 {
            return fail("density interval must be positive".into());
        }
        if !(0.0..=1.0).contains(&d.split_percentile) || d.split_shrink <= 0.0 {
            return fail("invalid split settings".into());
        }
        if !(self.lambda_s >= 0.0 && self.lambda_t >= 0.0) {
            return fail("regularization weights must be non-negative".into());
        }
        if !(self.eps_abs > 0.0) {
            return fail("eps_abs must be positive".into());
        }
        Ok(())
    }

    /// Whether a density-control event runs after `completed` steps.
    pub fn density_due(&self, completed: usize) -> bool {
        if self.iters == 0 || !completed.is_multiple_of(self.density.interval) {
            return false;
        }
        let frac = completed as f64 / self.iters as f64;
        frac >= self.density.start && frac <= self.density.end
    }
}
