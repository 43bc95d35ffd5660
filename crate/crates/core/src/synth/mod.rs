//! Synthetic two-view problems with known ground truth.
//!
//! Scenes, noise and study drivers for solver stability, noise sensitivity
//! and end-to-end estimator benchmarks. Every trial derives its own random
//! stream from the master seed and the trial index.

mod e2e;
mod noise;
mod scene;
mod study;

pub use e2e::{run_end_to_end, EndToEndConfig, EndToEndTrial};
pub use noise::{corrupt, perturb_gravity, CorruptedPool, NoiseConfig};
pub use scene::{exact_affine, generate_scene, SceneParams, SyntheticScene};
pub use study::{
    noise_study_errors, run_noise_study, run_stability_study, trial_rng, HistogramBin, NoiseRow,
    NoiseStudyConfig, StabilityReport, StudySolver, HISTOGRAM_BINS, HISTOGRAM_RANGE,
};

#[cfg(test)]
mod tests;
