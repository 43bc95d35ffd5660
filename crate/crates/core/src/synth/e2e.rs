use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::noise::{corrupt, perturb_gravity, CorruptedPool, NoiseConfig};
use super::scene::{generate_scene, SceneParams, SyntheticScene};
use super::study::trial_rng;
use crate::error::{Error, Result};
use crate::estimator::{estimate_normalized, guided_matching, EstimationResult, EstimatorConfig};
use crate::geometry::{
    decompose_homography_with_gravity, homography_transfer_error, ImagePoint, ModelKind,
};
use crate::metrics::{pose_error, PoseError, TranslationSign};

/// Synthetic end-to-end benchmark: scene, corruption and estimator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndConfig {
    pub kind: ModelKind,
    pub trials: usize,
    pub seed: u64,
    pub scene: SceneParams,
    pub noise: NoiseConfig,
    /// When set, each trial tilts both gravity vectors by independent angles
    /// drawn uniformly from `[0, max]` degrees, overriding
    /// `noise.gravity_noise_deg`.
    pub max_gravity_noise_deg: Option<f64>,
    pub estimator: EstimatorConfig,
    /// Runs trials on the rayon pool. Results do not depend on it; only the
    /// measured runtimes do.
    pub parallel: bool,
}

impl EndToEndConfig {
    /// 100 points, `k = 3`, 50% outliers and 1 px image noise.
    pub fn new(kind: ModelKind, trials: usize, seed: u64) -> Self {
        Self {
            kind,
            trials,
            seed,
            scene: SceneParams {
                planar: kind == ModelKind::Homography,
                ..SceneParams::default()
            },
            noise: NoiseConfig {
                image_noise_px: 1.0,
                outlier_ratio: 0.5,
                pool_k: 3,
                ..NoiseConfig::default()
            },
            max_gravity_noise_deg: None,
            estimator: EstimatorConfig::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndTrial {
    /// `None` when no model was found or no pose could be extracted.
    pub error: Option<PoseError>,
    pub inliers: usize,
    /// Final matches that are labeled true.
    pub true_inliers: usize,
    pub iterations: usize,
    pub lo_runs: usize,
    pub score: f64,
    pub runtime_s: f64,
    /// Homographies only: mean symmetric transfer error, in pixels, over the
    /// noisy true matches.
    pub transfer_error_px: Option<f64>,
    /// The best score never decreased during sampling.
    pub lo_monotone: bool,
    /// Guided matching on the returned model reproduces the reported score
    /// and matches bit for bit.
    pub score_reproducible: bool,
}

impl EndToEndTrial {
    /// Combined pose error, `f64::INFINITY` on failure.
    pub fn pose_error_deg(&self) -> f64 {
        self.error.map_or(f64::INFINITY, |e| e.combined_deg)
    }
}

fn run_trial(cfg: &EndToEndConfig, trial: u64) -> Result<EndToEndTrial> {
    let mut rng = trial_rng(cfg.seed, trial);
    let scene = generate_scene(&cfg.scene, &mut rng)?;
    let acs = scene.correspondences()?;
    let mut noise = cfg.noise;
    if cfg.max_gravity_noise_deg.is_some() {
        noise.gravity_noise_deg = 0.0;
    }
    let mut data = corrupt(&scene, &acs, &noise, &mut rng)?;
    if let Some(max) = cfg.max_gravity_noise_deg {
        let (a1, a2) = (rng.random_range(0.0..=max), rng.random_range(0.0..=max));
        data.gravity = (
            perturb_gravity(&data.gravity.0, a1, &mut rng),
            perturb_gravity(&data.gravity.1, a2, &mut rng),
        );
    }
    finish_trial(cfg, &scene, data)
}

fn finish_trial(
    cfg: &EndToEndConfig,
    scene: &SyntheticScene,
    data: CorruptedPool,
) -> Result<EndToEndTrial> {
    let (k1, k2) = (&scene.intrinsics.0, &scene.intrinsics.1);
    let focal = 0.5 * (k1.mean_focal() + k2.mean_focal());
    let config = EstimatorConfig {
        trace: true,
        ..cfg.estimator
    }
    .scaled(focal);
    let gravity = (&data.gravity.0, &data.gravity.1);

    let start = Instant::now();
    let pool = data.pool.normalized(k1, k2);
    let outcome = estimate_normalized(&pool, cfg.kind, gravity, &config);
    let runtime_s = start.elapsed().as_secs_f64();

    let result: EstimationResult = match outcome {
        Ok(r) => r,
        Err(Error::NoModelFound) => {
            return Ok(EndToEndTrial {
                error: None,
                inliers: 0,
                true_inliers: 0,
                iterations: 0,
                lo_runs: 0,
                score: 0.0,
                runtime_s,
                transfer_error_px: None,
                lo_monotone: true,
                score_reproducible: true,
            })
        }
        Err(e) => return Err(e),
    };

    let truncated = pool.truncated(config.k);
    let (matches, score) = guided_matching(&result.model, &truncated, &config);
    let score_reproducible = score.to_bits() == result.score.to_bits() && matches == result.matches;
    let lo_monotone = result
        .trace
        .as_ref()
        .is_some_and(|tr| tr.windows(2).all(|w| w[1].best_score >= w[0].best_score))
        && result
            .trace
            .as_ref()
            .and_then(|tr| tr.last())
            .is_none_or(|last| result.score >= last.best_score);

    let true_inliers = result
        .matches
        .iter()
        .filter(|m| data.labels[m.source_index][m.rank])
        .count();
    let pairs: Vec<(ImagePoint, ImagePoint)> = result
        .matches
        .iter()
        .map(|m| {
            (
                truncated.source_points()[m.source_index],
                truncated.candidates()[m.source_index][m.rank].p2,
            )
        })
        .collect();

    let (pose, transfer_error_px) = match cfg.kind {
        ModelKind::Essential => (result.model.pose, None),
        ModelKind::Homography => {
            let pose = decompose_homography_with_gravity(&result.model.matrix, &pairs, gravity)
                .ok()
                .map(|d| d.pose);
            let h_px = k2.matrix() * result.model.matrix * k1.inverse();
            let errs: Vec<f64> = data
                .labels
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.iter().position(|&b| b).map(|j| (i, j)))
                .filter_map(|(i, j)| {
                    homography_transfer_error(
                        &data.pool.source_points()[i],
                        &data.pool.candidates()[i][j].p2,
                        &h_px,
                    )
                    .ok()
                })
                .collect();
            let mean = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
            (pose, mean)
        }
    };
    let error = pose.map(|p| pose_error(&scene.pose_gt, &p, TranslationSign::Unsigned));

    Ok(EndToEndTrial {
        error,
        inliers: result.matches.len(),
        true_inliers,
        iterations: result.iterations_run,
        lo_runs: result.lo_runs,
        score: result.score,
        runtime_s,
        transfer_error_px,
        lo_monotone,
        score_reproducible,
    })
}

/// Runs `cfg.trials` independent end-to-end trials. Every trial owns its
/// random stream, so results are identical with or without parallelism.
pub fn run_end_to_end(cfg: &EndToEndConfig) -> Result<Vec<EndToEndTrial>> {
    cfg.estimator.validate()?;
    cfg.noise.validate()?;
    if cfg.trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    if cfg.max_gravity_noise_deg.is_some_and(|m| !(m >= 0.0)) {
        return Err(Error::InvalidConfig(
            "gravity noise bound must be nonnegative".into(),
        ));
    }
    if cfg.parallel {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| run_trial(cfg, t))
            .collect()
    } else {
        (0..cfg.trials as u64).map(|t| run_trial(cfg, t)).collect()
    }
}
