//! Two-view geometric primitives: points, affine correspondences, camera
//! intrinsics, gravity directions, relative poses and model hypotheses,
//! together with the residuals and decompositions built on them.
//!
//! Pose convention: a 3D point `X1` in the first camera frame maps to
//! `X2 = R * X1 - t` in the second. Under this convention the essential
//! matrix is `E = [t]x R` and the homography induced by the plane
//! `n'^T X1 = 1` is `H = R - t n'^T`.

mod essential;
mod homography;
mod residuals;

pub use essential::{
    compose_essential, decompose_essential, decompose_essential_with_points, essential_candidates,
    project_to_essential, triangulate_depths,
};
pub use homography::{
    decompose_homography, decompose_homography_with_gravity, HomographyDecomposition,
};
pub(crate) use residuals::homography_transfer_error_with_inverse;
pub use residuals::{
    affine_epipolar_residual, epipolar_normals, homography_transfer_error, sampson_distance,
    symmetric_epipolar_error,
};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// A point in an image, either in pixels or in normalized camera
/// coordinates. The homogeneous coordinate is implicitly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
}

impl ImagePoint {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if !(u.is_finite() && v.is_finite()) {
            return Err(Error::NonFinite("image point"));
        }
        Ok(Self { u, v })
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    pub fn coords(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    /// Dehomogenizes `h`, failing when its last coordinate vanishes.
    pub fn from_homogeneous(h: &Vector3<f64>) -> Result<Self> {
        if h.z.abs() < 1e-12 {
            return Err(Error::PointAtInfinity);
        }
        Self::new(h.x / h.z, h.y / h.z)
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// A point pair plus the 2x2 local affine map taking the infinitesimal
/// neighbourhood of `p1` onto that of `p2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineCorrespondence {
    pub p1: ImagePoint,
    pub p2: ImagePoint,
    pub a: Matrix2<f64>,
}

impl AffineCorrespondence {
    pub fn new(p1: ImagePoint, p2: ImagePoint, a: Matrix2<f64>) -> Result<Self> {
        if !a.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("affine matrix"));
        }
        if a.determinant().abs() < 1e-12 {
            return Err(Error::SingularAffine);
        }
        Ok(Self { p1, p2, a })
    }

    /// `A^{-T}`, failing on a singular affine.
    pub fn inverse_transpose(&self) -> Result<Matrix2<f64>> {
        inverse_transpose(&self.a)
    }
}

pub(crate) fn inverse_transpose(a: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    if a.determinant().abs() < 1e-12 {
        return Err(Error::SingularAffine);
    }
    a.try_inverse()
        .map(|inv| inv.transpose())
        .ok_or(Error::SingularAffine)
}

/// Upper-triangular calibration matrix `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
}

impl CameraIntrinsics {
    pub fn new(k: Matrix3<f64>) -> Result<Self> {
        if !k.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("intrinsics"));
        }
        if k[(2, 2)] != 1.0 {
            return Err(Error::InvalidIntrinsics("K[2][2] must be 1"));
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(Error::InvalidIntrinsics("focal lengths must be positive"));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidIntrinsics("K must be upper triangular"));
        }
        let k_inv = k
            .try_inverse()
            .ok_or(Error::InvalidIntrinsics("K is not invertible"))?;
        Ok(Self { k, k_inv })
    }

    /// Square pixels, zero skew.
    pub fn from_focal(f: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::new(Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    pub fn mean_focal(&self) -> f64 {
        0.5 * (self.k[(0, 0)] + self.k[(1, 1)])
    }
}

/// Maps a pixel to normalized camera coordinates: `K^{-1} [u, v, 1]^T`.
pub fn normalize_point(p: &ImagePoint, k: &CameraIntrinsics) -> ImagePoint {
    let h = k.k_inv * p.homogeneous();
    // K^{-1} keeps the last coordinate at 1.
    ImagePoint {
        u: h.x / h.z,
        v: h.y / h.z,
    }
}

pub fn denormalize_point(p: &ImagePoint, k: &CameraIntrinsics) -> ImagePoint {
    let h = k.k * p.homogeneous();
    ImagePoint {
        u: h.x / h.z,
        v: h.y / h.z,
    }
}

/// Transfers a pixel-space affine into normalized coordinates,
/// `J2 * A * J1^{-1}` with `J` the 2x2 Jacobian of the normalization map.
pub fn normalize_affine(
    a: &Matrix2<f64>,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Result<Matrix2<f64>> {
    let j1_inv: Matrix2<f64> = k1.k.fixed_view::<2, 2>(0, 0).into_owned();
    let j2: Matrix2<f64> = k2.k_inv.fixed_view::<2, 2>(0, 0).into_owned();
    let out = j2 * a * j1_inv;
    if out.determinant().abs() < 1e-12 || !out.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularAffine);
    }
    Ok(out)
}

/// Inverse of [`normalize_affine`].
pub fn denormalize_affine(
    a: &Matrix2<f64>,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
) -> Matrix2<f64> {
    let j1: Matrix2<f64> = k1.k_inv.fixed_view::<2, 2>(0, 0).into_owned();
    let j2_inv: Matrix2<f64> = k2.k.fixed_view::<2, 2>(0, 0).into_owned();
    j2_inv * a * j1
}

/// Unit direction of gravity expressed in a camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityDirection {
    v: Vector3<f64>,
}

impl GravityDirection {
    /// Normalizes `v`; zero or non-finite input is rejected.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidGravity);
        }
        Ok(Self { v: v / n })
    }

    /// The "gravity points down the image" prior, `[0, -1, 0]`.
    pub fn down() -> Self {
        Self {
            v: Vector3::new(0.0, -1.0, 0.0),
        }
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.v
    }
}

/// Rotation and unit translation between two calibrated views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl RelativePose {
    /// Validates that `r` is a proper rotation and rescales `t` to unit length.
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        if !(r.iter().all(|x| x.is_finite()) && t.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("pose"));
        }
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 {
            return Err(Error::InvalidPose("rotation is not orthonormal"));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPose("rotation has negative determinant"));
        }
        let n = t.norm();
        if n < 1e-15 {
            return Err(Error::InvalidPose("translation vanishes"));
        }
        Ok(Self { r, t: t / n })
    }

    pub fn flipped(&self) -> Self {
        Self {
            r: self.r,
            t: -self.t,
        }
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Essential,
    Homography,
}

impl ModelKind {
    /// Matches needed by the point-based refit used in local optimization.
    pub fn refit_sample_size(self) -> usize {
        match self {
            ModelKind::Essential => 8,
            ModelKind::Homography => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Essential => "essential",
            ModelKind::Homography => "homography",
        }
    }
}

/// An essential matrix or homography, optionally with the pose (and, for a
/// homography, the scaled plane normal `n' = n / d`) it was generated from.
///
/// The stored matrix is normalized: `||E||_F = sqrt(2)`, and `||H||_F = 1`
/// with its largest-magnitude entry positive. `pose` and `plane_normal`
/// reproduce the matrix only up to that scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelHypothesis {
    pub kind: ModelKind,
    pub matrix: Matrix3<f64>,
    pub pose: Option<RelativePose>,
    pub plane_normal: Option<Vector3<f64>>,
}

impl ModelHypothesis {
    pub fn essential(e: Matrix3<f64>) -> Result<Self> {
        let n = e.norm();
        if !n.is_finite() || n < 1e-15 {
            return Err(Error::DegenerateConfiguration("zero essential matrix"));
        }
        Ok(Self {
            kind: ModelKind::Essential,
            matrix: e * (std::f64::consts::SQRT_2 / n),
            pose: None,
            plane_normal: None,
        })
    }

    pub fn essential_from_pose(pose: RelativePose) -> Self {
        Self {
            kind: ModelKind::Essential,
            matrix: compose_essential(&pose),
            pose: Some(pose),
            plane_normal: None,
        }
    }

    pub fn homography(h: Matrix3<f64>) -> Result<Self> {
        Ok(Self {
            kind: ModelKind::Homography,
            matrix: normalize_homography(&h)?,
            pose: None,
            plane_normal: None,
        })
    }

    /// `H = R - t n'^T`.
    pub fn homography_from_plane(pose: RelativePose, plane_normal: Vector3<f64>) -> Result<Self> {
        let h = pose.r - pose.t * plane_normal.transpose();
        let mut model = Self::homography(h)?;
        model.pose = Some(pose);
        model.plane_normal = Some(plane_normal);
        Ok(model)
    }

    pub fn with_pose(mut self, pose: RelativePose) -> Self {
        self.pose = Some(pose);
        self
    }
}

/// Scales `h` to unit Frobenius norm with its largest-magnitude entry positive.
/// Among entries within `1e-9` relative of the largest, the first in row-major
/// order decides the sign.
pub fn normalize_homography(h: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !h.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("homography"));
    }
    let n = h.norm();
    if n < 1e-15 || (h.determinant() / (n * n * n)).abs() < 1e-14 {
        return Err(Error::DegenerateConfiguration("singular homography"));
    }
    // Ties within rounding are broken by row-major order so that the sign
    // does not depend on noise in equal-magnitude entries.
    let max = h.amax();
    let largest = (0..9)
        .map(|i| h[(i / 3, i % 3)])
        .find(|x| x.abs() >= max * (1.0 - 1e-9))
        .expect("nonzero matrix");
    Ok(h * (largest.signum() / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_intrinsics(rng: &mut impl Rng) -> CameraIntrinsics {
        CameraIntrinsics::new(Matrix3::new(
            rng.random_range(300.0..2000.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(0.0..1000.0),
            0.0,
            rng.random_range(300.0..2000.0),
            rng.random_range(0.0..1000.0),
            0.0,
            0.0,
            1.0,
        ))
        .unwrap()
    }

    #[test]
    fn principal_point_maps_to_origin() {
        let k = CameraIntrinsics::from_focal(1000.0, 0.0, 0.0).unwrap();
        let p = normalize_point(&ImagePoint::new(0.0, 0.0).unwrap(), &k);
        assert_eq!((p.u, p.v), (0.0, 0.0));
        let p = normalize_point(&ImagePoint::new(1000.0, 0.0).unwrap(), &k);
        assert_eq!((p.u, p.v), (1.0, 0.0));
    }

    #[test]
    fn normalize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let k = random_intrinsics(&mut rng);
            let p = ImagePoint::new(
                rng.random_range(-500.0..1500.0),
                rng.random_range(-500.0..1500.0),
            )
            .unwrap();
            let back = denormalize_point(&normalize_point(&p, &k), &k);
            assert!((back.u - p.u).abs() < 1e-12 * p.u.abs().max(1.0));
            assert!((back.v - p.v).abs() < 1e-12 * p.v.abs().max(1.0));
        }
    }

    #[test]
    fn affine_normalization_focal_cases() {
        let k1000 = CameraIntrinsics::from_focal(1000.0, 0.0, 0.0).unwrap();
        let k500 = CameraIntrinsics::from_focal(500.0, 0.0, 0.0).unwrap();
        let i = Matrix2::identity();
        assert_relative_eq!(
            normalize_affine(&i, &k1000, &k1000).unwrap(),
            i,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            normalize_affine(&i, &k1000, &k500).unwrap(),
            i * 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn affine_normalization_matches_chain_rule() {
        // Compose pixel map q -> p2_pix(q) = p2 + A (q - p1) with the two
        // normalizations and differentiate numerically in normalized space.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k1 = random_intrinsics(&mut rng);
            let k2 = random_intrinsics(&mut rng);
            let a = Matrix2::new(
                rng.random_range(0.5..1.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.5..1.5),
            );
            let p1 = ImagePoint::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0))
                .unwrap();
            let p2 = ImagePoint::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0))
                .unwrap();
            let x1 = normalize_point(&p1, &k1);
            let map = |x: ImagePoint| {
                let q = denormalize_point(&x, &k1);
                let d = a * Vector2::new(q.u - p1.u, q.v - p1.v);
                normalize_point(
                    &ImagePoint {
                        u: p2.u + d.x,
                        v: p2.v + d.y,
                    },
                    &k2,
                )
            };
            let h = 1e-6;
            let mut fd = Matrix2::zeros();
            for j in 0..2 {
                let (mut xp, mut xm) = (x1, x1);
                if j == 0 {
                    xp.u += h;
                    xm.u -= h;
                } else {
                    xp.v += h;
                    xm.v -= h;
                }
                let (fp, fm) = (map(xp), map(xm));
                fd[(0, j)] = (fp.u - fm.u) / (2.0 * h);
                fd[(1, j)] = (fp.v - fm.v) / (2.0 * h);
            }
            let analytic = normalize_affine(&a, &k1, &k2).unwrap();
            assert_relative_eq!(analytic, fd, max_relative = 1e-6, epsilon = 1e-8);
            assert_relative_eq!(denormalize_affine(&analytic, &k1, &k2), a, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(ImagePoint::new(f64::NAN, 0.0).is_err());
        assert_eq!(
            AffineCorrespondence::new(
                ImagePoint::new(0.0, 0.0).unwrap(),
                ImagePoint::new(0.0, 0.0).unwrap(),
                Matrix2::new(1.0, 2.0, 2.0, 4.0)
            ),
            Err(Error::SingularAffine)
        );
        assert!(
            CameraIntrinsics::new(Matrix3::new(1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0))
                .is_err()
        );
        assert!(CameraIntrinsics::from_focal(-1.0, 0.0, 0.0).is_err());
        assert_eq!(
            GravityDirection::new(Vector3::zeros()),
            Err(Error::InvalidGravity)
        );
        assert!(RelativePose::new(Matrix3::identity() * 2.0, Vector3::x()).is_err());
        assert!(RelativePose::new(-Matrix3::identity(), Vector3::x()).is_err());
    }

    #[test]
    fn homography_normalization_convention() {
        let h = Matrix3::new(-1.0, 0.0, 3.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let m = ModelHypothesis::homography(h).unwrap();
        assert_relative_eq!(m.matrix.norm(), 1.0, epsilon = 1e-15);
        assert!(m.matrix[(0, 2)] > 0.0);
        let e = ModelHypothesis::essential(skew(&Vector3::new(3.0, 0.0, 0.0))).unwrap();
        assert_relative_eq!(e.matrix.norm(), std::f64::consts::SQRT_2, epsilon = 1e-15);
    }
}
