use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::noise::{corrupt, NoiseConfig};
use super::scene::{generate_scene, SceneParams};
use crate::error::{Error, Result};
use crate::geometry::{
    decompose_homography, normalize_affine, normalize_point, AffineCorrespondence,
    GravityDirection, ImagePoint, ModelHypothesis, RelativePose,
};
use crate::metrics::{pose_error, PoseError, TranslationSign};
use crate::solvers::{solve_homography_1ac_gravity, solve_homography_4pc, solve_pose_1ac_gravity};

/// Solvers covered by the synthetic studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudySolver {
    /// Relative pose from one affine correspondence and gravity.
    Pose1acg,
    /// Homography from one affine correspondence and gravity.
    Homography1acg,
    /// Homography from four points.
    FourPoint,
}

impl StudySolver {
    pub fn name(self) -> &'static str {
        match self {
            StudySolver::Pose1acg => "1acg-pose",
            StudySolver::Homography1acg => "1acg-h",
            StudySolver::FourPoint => "4pc",
        }
    }

    fn scene_params(self) -> SceneParams {
        SceneParams {
            n_points: if self == StudySolver::FourPoint { 4 } else { 1 },
            planar: self != StudySolver::Pose1acg,
            ..SceneParams::default()
        }
    }
}

/// Generator of trial `stream` under a master seed. Trials are independent
/// of scheduling because each owns its stream.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Offset separating noise streams from scene streams.
const NOISE_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// Candidate closest to the ground truth, by the larger of the two errors.
fn best_error(
    gt: &RelativePose,
    poses: impl IntoIterator<Item = RelativePose>,
) -> Option<PoseError> {
    poses
        .into_iter()
        .map(|p| pose_error(gt, &p, TranslationSign::Fold))
        .min_by(|a, b| a.combined_deg.total_cmp(&b.combined_deg))
}

fn homography_poses(
    models: &[ModelHypothesis],
    reference: &[(ImagePoint, ImagePoint)],
) -> Vec<RelativePose> {
    models
        .iter()
        .filter_map(|h| decompose_homography(&h.matrix, reference).ok())
        .flatten()
        .map(|d| d.pose)
        .collect()
}

/// One solver run on a fresh scene. `None` when the scene cannot be
/// generated or the solver returns nothing.
fn solver_trial(
    solver: StudySolver,
    noise: &NoiseConfig,
    seed: u64,
    trial: u64,
) -> Option<PoseError> {
    let mut rng = trial_rng(seed, trial);
    let scene = generate_scene(&solver.scene_params(), &mut rng).ok()?;
    let acs = scene.correspondences().ok()?;
    let mut noise_rng = trial_rng(seed.wrapping_add(NOISE_SEED_OFFSET), trial);
    let noisy = corrupt(
        &scene,
        &acs,
        &NoiseConfig {
            pool_k: 1,
            outlier_ratio: 0.0,
            ..*noise
        },
        &mut noise_rng,
    )
    .ok()?;

    let (k1, k2) = (&scene.intrinsics.0, &scene.intrinsics.1);
    let pairs: Vec<(ImagePoint, ImagePoint)> = noisy
        .pool
        .source_points()
        .iter()
        .zip(noisy.pool.candidates())
        .map(|(p1, c)| (normalize_point(p1, k1), normalize_point(&c[0].p2, k2)))
        .collect();
    let ac = || -> Option<AffineCorrespondence> {
        let a = normalize_affine(&noisy.pool.candidates()[0][0].affine?, k1, k2).ok()?;
        AffineCorrespondence::new(pairs[0].0, pairs[0].1, a).ok()
    };
    let (v1, v2): (&GravityDirection, &GravityDirection) = (&noisy.gravity.0, &noisy.gravity.1);
    let gt = &scene.pose_gt;
    match solver {
        StudySolver::Pose1acg => {
            let out = solve_pose_1ac_gravity(&ac()?, v1, v2).ok()?;
            best_error(gt, out.poses.iter().map(|c| c.pose))
        }
        StudySolver::Homography1acg => {
            let out = solve_homography_1ac_gravity(&ac()?, v1, v2).ok()?;
            best_error(gt, homography_poses(&out.homographies, &pairs))
        }
        StudySolver::FourPoint => {
            let four: [(ImagePoint, ImagePoint); 4] = pairs.clone().try_into().ok()?;
            let h = solve_homography_4pc(&four).ok()?;
            best_error(gt, homography_poses(&[h], &pairs))
        }
    }
}

pub const HISTOGRAM_BINS: usize = 60;
pub const HISTOGRAM_RANGE: (f64, f64) = (-16.0, 2.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count_rot: usize,
    pub count_trans: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub solver: StudySolver,
    pub trials: usize,
    pub failures: usize,
    /// Per-trial errors in trial order; `None` marks a failure.
    pub errors: Vec<Option<PoseError>>,
    pub histogram: Vec<HistogramBin>,
    /// `(q, log10 rotation error, log10 translation error)` over the
    /// successful trials.
    pub quantiles: Vec<(f64, f64, f64)>,
}

impl StabilityReport {
    pub fn log10_errors(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.errors
            .iter()
            .flatten()
            .map(|e| (e.rotation_deg.log10(), e.translation_deg.log10()))
    }
}

fn bin_index(x: f64) -> usize {
    let (lo, hi) = HISTOGRAM_RANGE;
    let x = if x.is_nan() { hi } else { x.clamp(lo, hi) };
    let i = ((x - lo) / (hi - lo) * HISTOGRAM_BINS as f64).floor() as usize;
    i.min(HISTOGRAM_BINS - 1)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Noiseless solver runs on `trials` random scenes: the log10 errors of the
/// best candidate of every run, binned over `[-16, 2]`.
pub fn run_stability_study(
    solver: StudySolver,
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be positive".into()));
    }
    let noise = NoiseConfig::default();
    let errors: Vec<Option<PoseError>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| solver_trial(solver, &noise, seed, t))
        .collect();

    let (lo, hi) = HISTOGRAM_RANGE;
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            count_rot: 0,
            count_trans: 0,
        })
        .collect();
    let mut rot = Vec::new();
    let mut trans = Vec::new();
    for e in errors.iter().flatten() {
        let (r, t) = (e.rotation_deg.log10(), e.translation_deg.log10());
        histogram[bin_index(r)].count_rot += 1;
        histogram[bin_index(t)].count_trans += 1;
        rot.push(r.max(f64::MIN));
        trans.push(t.max(f64::MIN));
    }
    rot.sort_by(f64::total_cmp);
    trans.sort_by(f64::total_cmp);
    let quantiles = [0.01, 0.1, 0.5, 0.9, 0.99]
        .iter()
        .map(|&q| (q, quantile(&rot, q), quantile(&trans, q)))
        .collect();
    let failures = errors.iter().filter(|e| e.is_none()).count();
    Ok(StabilityReport {
        solver,
        trials,
        failures,
        errors,
        histogram,
        quantiles,
    })
}

/// Fixed perturbations accompanying the image-noise sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStudyConfig {
    pub gravity_noise_deg: f64,
    pub affine_noise_px: f64,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        Self {
            gravity_noise_deg: 0.1,
            affine_noise_px: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRow {
    pub noise_px: f64,
    pub mean_rot_deg: f64,
    pub mean_trans_deg: f64,
    pub stderr_rot: f64,
    pub stderr_trans: f64,
    pub trials: usize,
    pub failures: usize,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-trial errors of the noise sweep, `errors[level][trial]`.
///
/// Every level reuses the same scenes and the same noise directions, scaled
/// by the level, so differences between levels are due to the noise
/// magnitude alone.
pub fn noise_study_errors(
    solver: StudySolver,
    levels: &[f64],
    trials: usize,
    seed: u64,
    fixed: &NoiseStudyConfig,
) -> Result<Vec<Vec<Option<PoseError>>>> {
    if trials == 0 || levels.is_empty() {
        return Err(Error::InvalidConfig(
            "need at least one level and one trial".into(),
        ));
    }
    if levels.windows(2).any(|w| w[0] > w[1]) || levels.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidConfig(
            "noise levels must be nonnegative and ascending".into(),
        ));
    }
    Ok(levels
        .iter()
        .map(|&level| {
            let noise = NoiseConfig {
                image_noise_px: level,
                gravity_noise_deg: fixed.gravity_noise_deg,
                affine_noise_px: fixed.affine_noise_px,
                ..NoiseConfig::default()
            };
            (0..trials as u64)
                .into_par_iter()
                .map(|t| solver_trial(solver, &noise, seed, t))
                .collect()
        })
        .collect())
}

/// Mean rotation and translation errors for each image-noise level.
pub fn run_noise_study(
    solver: StudySolver,
    levels: &[f64],
    trials: usize,
    seed: u64,
    fixed: &NoiseStudyConfig,
) -> Result<Vec<NoiseRow>> {
    let all = noise_study_errors(solver, levels, trials, seed, fixed)?;
    Ok(levels
        .iter()
        .zip(all)
        .map(|(&noise_px, errs)| {
            let rot: Vec<f64> = errs.iter().flatten().map(|e| e.rotation_deg).collect();
            let trans: Vec<f64> = errs.iter().flatten().map(|e| e.translation_deg).collect();
            let (mean_rot_deg, stderr_rot) = mean_and_stderr(&rot);
            let (mean_trans_deg, stderr_trans) = mean_and_stderr(&trans);
            NoiseRow {
                noise_px,
                mean_rot_deg,
                mean_trans_deg,
                stderr_rot,
                stderr_trans,
                trials,
                failures: errs.iter().filter(|e| e.is_none()).count(),
            }
        })
        .collect())
}
