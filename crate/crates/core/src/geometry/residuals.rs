use nalgebra::{Matrix3, Vector2};

use super::{AffineCorrespondence, ImagePoint};
use crate::error::{Error, Result};

const DEGENERATE_DENOMINATOR: f64 = 1e-15;

/// Normals of the two epipolar lines: `n1 = (E^T p2)[0..2]`, `n2 = (E p1)[0..2]`.
pub fn epipolar_normals(
    e: &Matrix3<f64>,
    p1: &ImagePoint,
    p2: &ImagePoint,
) -> (Vector2<f64>, Vector2<f64>) {
    let l1 = e.transpose() * p2.homogeneous();
    let l2 = e * p1.homogeneous();
    (Vector2::new(l1.x, l1.y), Vector2::new(l2.x, l2.y))
}

/// `A^{-T} n1 + n2`, which vanishes for an affine correspondence consistent
/// with `E`.
pub fn affine_epipolar_residual(
    ac: &AffineCorrespondence,
    e: &Matrix3<f64>,
) -> Result<Vector2<f64>> {
    let a_inv_t = ac.inverse_transpose()?;
    let (n1, n2) = epipolar_normals(e, &ac.p1, &ac.p2);
    Ok(a_inv_t * n1 + n2)
}

/// First-order geometric distance of a point pair to the epipolar geometry.
pub fn sampson_distance(p1: &ImagePoint, p2: &ImagePoint, e: &Matrix3<f64>) -> Result<f64> {
    let x1 = p1.homogeneous();
    let x2 = p2.homogeneous();
    let ex1 = e * x1;
    let etx2 = e.transpose() * x2;
    let algebraic = x2.dot(&ex1);
    let denom = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
    if denom < DEGENERATE_DENOMINATOR {
        return Err(Error::DegenerateResidual);
    }
    Ok(algebraic.abs() / denom.sqrt())
}

/// Root mean square of the point-to-epipolar-line distances in both images.
pub fn symmetric_epipolar_error(p1: &ImagePoint, p2: &ImagePoint, e: &Matrix3<f64>) -> Result<f64> {
    let x1 = p1.homogeneous();
    let x2 = p2.homogeneous();
    let ex1 = e * x1;
    let etx2 = e.transpose() * x2;
    let algebraic = x2.dot(&ex1);
    let d2 = ex1.x * ex1.x + ex1.y * ex1.y;
    let d1 = etx2.x * etx2.x + etx2.y * etx2.y;
    if d1 < DEGENERATE_DENOMINATOR || d2 < DEGENERATE_DENOMINATOR {
        return Err(Error::DegenerateResidual);
    }
    let sq = algebraic * algebraic;
    Ok((0.5 * (sq / d1 + sq / d2)).sqrt())
}

/// Root mean square of the forward and backward transfer errors of `H`.
pub fn homography_transfer_error(
    p1: &ImagePoint,
    p2: &ImagePoint,
    h: &Matrix3<f64>,
) -> Result<f64> {
    let h_inv = h
        .try_inverse()
        .ok_or(Error::DegenerateConfiguration("singular homography"))?;
    homography_transfer_error_with_inverse(p1, p2, h, &h_inv)
}

pub(crate) fn homography_transfer_error_with_inverse(
    p1: &ImagePoint,
    p2: &ImagePoint,
    h: &Matrix3<f64>,
    h_inv: &Matrix3<f64>,
) -> Result<f64> {
    let fwd = ImagePoint::from_homogeneous(&(h * p1.homogeneous()))?;
    let bwd = ImagePoint::from_homogeneous(&(h_inv * p2.homogeneous()))?;
    let ef = (fwd.u - p2.u).powi(2) + (fwd.v - p2.v).powi(2);
    let eb = (bwd.u - p1.u).powi(2) + (bwd.v - p1.v).powi(2);
    Ok((0.5 * (ef + eb)).sqrt())
}
