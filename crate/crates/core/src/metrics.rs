//! Pose-error metrics, exact AUC and benchmark aggregation.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::RelativePose;

/// How the sign of the translation direction is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranslationSign {
    /// `t` and `-t` are the same direction; errors fold into `[0, 90]`.
    /// Used for minimal-solver studies, whose candidates carry a sign ambiguity.
    Fold,
    /// Plain angle between the directions, in `[0, 180]`.
    Unsigned,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation_deg: f64,
    pub combined_deg: f64,
}

/// Angle of `a^T b` in degrees. Uses `atan2` so that tiny angles stay accurate.
pub fn rotation_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let q = a.transpose() * b;
    let sin_vec = Vector3::new(
        q[(2, 1)] - q[(1, 2)],
        q[(0, 2)] - q[(2, 0)],
        q[(1, 0)] - q[(0, 1)],
    );
    let sin = 0.5 * sin_vec.norm();
    let cos = 0.5 * (q.trace() - 1.0);
    sin.atan2(cos).to_degrees()
}

/// Angle between two vectors in degrees, in `[0, 180]`.
pub fn vector_angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

pub fn pose_error(gt: &RelativePose, est: &RelativePose, sign: TranslationSign) -> PoseError {
    let rotation_deg = rotation_angle_deg(&gt.r, &est.r);
    let mut translation_deg = vector_angle_deg(&gt.t, &est.t);
    if sign == TranslationSign::Fold {
        translation_deg = translation_deg.min(180.0 - translation_deg);
    }
    PoseError {
        rotation_deg,
        translation_deg,
        combined_deg: rotation_deg.max(translation_deg),
    }
}

/// Normalized area under the recall curve up to `threshold`.
///
/// Equals `mean(max(0, threshold - e)) / threshold`, the exact integral of the
/// empirical step function. Failures should be passed as `f64::INFINITY`.
pub fn auc(errors: &[f64], threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::EmptyInput);
    }
    assert!(threshold > 0.0, "AUC threshold must be positive");
    let area: f64 = errors
        .iter()
        .map(|&e| {
            if e.is_nan() {
                0.0
            } else {
                (threshold - e).max(0.0)
            }
        })
        .sum();
    Ok(area / errors.len() as f64 / threshold)
}

/// One benchmark trial; `error_deg = None` marks a failed estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub error_deg: Option<f64>,
    pub inliers: usize,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub avg_deg: f64,
    pub median_deg: f64,
    /// `(threshold, auc)` in the order the thresholds were given.
    pub auc: Vec<(f64, f64)>,
    pub mean_inliers: f64,
    pub mean_runtime_s: f64,
    pub trials: usize,
}

/// Lower median: the element of rank `(n - 1) / 2` after sorting.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[(sorted.len() - 1) / 2])
}

pub fn aggregate(trials: &[TrialOutcome], thresholds: &[f64]) -> Result<BenchmarkReport> {
    if trials.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = trials.len() as f64;
    let errors: Vec<f64> = trials
        .iter()
        .map(|t| t.error_deg.unwrap_or(f64::INFINITY))
        .collect();
    let auc = thresholds
        .iter()
        .map(|&tau| auc(&errors, tau).map(|v| (tau, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkReport {
        avg_deg: errors.iter().sum::<f64>() / n,
        median_deg: lower_median(&errors).expect("nonempty"),
        auc,
        mean_inliers: trials.iter().map(|t| t.inliers as f64).sum::<f64>() / n,
        mean_runtime_s: trials.iter().map(|t| t.runtime_s).sum::<f64>() / n,
        trials: trials.len(),
    })
}
