use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use super::{skew, ImagePoint, RelativePose};
use crate::error::{Error, Result};

/// `[t]x R`, scaled to Frobenius norm `sqrt(2)`.
pub fn compose_essential(pose: &RelativePose) -> Matrix3<f64> {
    let e = skew(&pose.t) * pose.r;
    e * (std::f64::consts::SQRT_2 / e.norm())
}

/// Replaces the singular values of `m` by `(1, 1, 0)`.
pub fn project_to_essential(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::zeros();
    s[(0, 0)] = 1.0;
    s[(1, 1)] = 1.0;
    u * s * v_t
}

/// The four `(R, t)` factorizations of an essential matrix.
pub fn essential_candidates(e: &Matrix3<f64>) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    // Sign flips of U or V only flip the sign of E, which the epipolar
    // geometry does not see.
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into_owned();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Depths of the midpoint triangulation of `(p1, p2)` in both cameras, or
/// `None` when the viewing rays are parallel.
pub fn triangulate_depths(
    pose: &RelativePose,
    p1: &ImagePoint,
    p2: &ImagePoint,
) -> Option<(f64, f64)> {
    let d1 = p1.homogeneous();
    let d2 = pose.r.transpose() * p2.homogeneous();
    let c2 = pose.r.transpose() * pose.t;
    // Least squares for lambda1 * d1 - lambda2 * d2 = c2.
    let m = Matrix2::new(d1.dot(&d1), -d1.dot(&d2), -d1.dot(&d2), d2.dot(&d2));
    let rhs = Vector2::new(d1.dot(&c2), -d2.dot(&c2));
    let det = m.determinant();
    if det.abs() < 1e-14 * m[(0, 0)] * m[(1, 1)] {
        return None;
    }
    let lambda = m.try_inverse()? * rhs;
    let x = 0.5 * (d1 * lambda.x + c2 + d2 * lambda.y);
    let x2 = pose.r * x - pose.t;
    Some((x.z, x2.z))
}

/// Picks the factorization of `E` that puts the sample match in front of
/// both cameras.
pub fn decompose_essential(
    e: &Matrix3<f64>,
    sample: (&ImagePoint, &ImagePoint),
) -> Result<RelativePose> {
    let mut best: Option<(f64, RelativePose)> = None;
    for (r, t) in essential_candidates(e) {
        let Ok(pose) = RelativePose::new(r, t) else {
            continue;
        };
        if let Some((z1, z2)) = triangulate_depths(&pose, sample.0, sample.1) {
            let margin = z1.min(z2);
            if margin > 0.0 && best.is_none_or(|(m, _)| margin > m) {
                best = Some((margin, pose));
            }
        }
    }
    best.map(|(_, pose)| pose).ok_or(Error::CheiralityFailure)
}

/// Majority-vote cheirality over many matches; ties go to the earlier candidate.
pub fn decompose_essential_with_points(
    e: &Matrix3<f64>,
    matches: &[(ImagePoint, ImagePoint)],
) -> Result<RelativePose> {
    let mut best: Option<(usize, RelativePose)> = None;
    for (r, t) in essential_candidates(e) {
        let Ok(pose) = RelativePose::new(r, t) else {
            continue;
        };
        let votes = matches
            .iter()
            .filter(|(p1, p2)| matches!(triangulate_depths(&pose, p1, p2), Some((z1, z2)) if z1 > 0.0 && z2 > 0.0))
            .count();
        if votes > 0 && best.is_none_or(|(v, _)| votes > v) {
            best = Some((votes, pose));
        }
    }
    best.map(|(_, pose)| pose).ok_or(Error::CheiralityFailure)
}
