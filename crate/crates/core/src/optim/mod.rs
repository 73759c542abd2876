//! Loss, optimizer and fitting loop.

pub mod adam;
pub mod config;
pub mod density;
pub mod fit;
pub mod loss;

pub use adam::{adam_step, cosine_lr, Moments};
pub use config::{AdamParams, DensityConfig, FitConfig, LearningRates};
pub use density::{density_control, split_primitive, DensityOutcome, DensityRules, SlotOrigin};
pub use fit::{fit, fit_observed, init_primitives, mean_weight_magnitudes, DensityEvent, FitReport, IterationInfo};
pub use loss::{loss_value, render_all, total_loss, LossEvaluation, LossWeights, ModelGradient};
