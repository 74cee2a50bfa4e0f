//! Paired particle filters over position and orientation DS parameters, with
//! confidence tracking.

mod config;
mod filter;
mod signals;

pub use config::{Bounds, FilterConfig, NoiseRange, Prior};
pub use filter::{
    alpha_hat, effective_sample_size, estimate_pos, estimate_rot, log_weight_pos, log_weight_rot,
    normalize, predict_pos, predict_rot, resample, sample_prior_pos, sample_prior_rot,
    systematic_indices, trim, weigh_pos, weigh_rot, DualFilter, EstimateSnapshot, FilterDump,
    Particle, StepStats,
};
pub use signals::{update_confidence, AccelEstimator, ConfidenceState, Observation};
