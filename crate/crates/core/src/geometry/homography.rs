use nalgebra::{Matrix3, Vector3};

use super::{GravityDirection, ImagePoint, RelativePose};
use crate::error::{Error, Result};

/// One physically plausible factorization `H ~ R - t n'^T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomographyDecomposition {
    pub pose: RelativePose,
    /// Plane normal scaled so that `n'^T X1 = 1` on the plane, in units where
    /// `||t|| = 1`.
    pub plane_normal: Vector3<f64>,
}

/// Analytic decomposition of a calibrated homography into rotation,
/// translation direction and plane.
///
/// `reference` fixes the sign of `H` (positive depth in the second view) and
/// discards factorizations whose plane would lie behind the first camera.
/// Usually two candidates survive; a third view or prior is needed to pick one.
pub fn decompose_homography(
    h: &Matrix3<f64>,
    reference: &[(ImagePoint, ImagePoint)],
) -> Result<Vec<HomographyDecomposition>> {
    let svd = h.svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[1] < 1e-12 {
        return Err(Error::DegenerateConfiguration("singular homography"));
    }
    let mut hn = h / sv[1];
    let sign_vote: f64 = reference
        .iter()
        .map(|(p1, p2)| p2.homogeneous().dot(&(hn * p1.homogeneous())).signum())
        .sum();
    if sign_vote < 0.0 {
        hn = -hn;
    }

    let hth = hn.transpose() * hn;
    let eig = hth.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s1 = eig.eigenvalues[order[0]];
    let s3 = eig.eigenvalues[order[2]];
    let v1: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let v2: Vector3<f64> = eig.eigenvectors.column(order[1]).into_owned();
    let v3: Vector3<f64> = eig.eigenvectors.column(order[2]).into_owned();
    if s1 - s3 < 1e-12 {
        // No parallax: H is a pure rotation and the translation is unobservable.
        return Err(Error::DegenerateConfiguration(
            "homography has no translation component",
        ));
    }
    let a = (1.0 - s3).max(0.0).sqrt();
    let b = (s1 - 1.0).max(0.0).sqrt();
    let c = (s1 - s3).sqrt();
    let u1 = (v1 * a + v3 * b) / c;
    let u2 = (v1 * a - v3 * b) / c;

    let mut out = Vec::with_capacity(4);
    for u in [u1, u2] {
        let uu = Matrix3::from_columns(&[v2, u, v2.cross(&u)]);
        let (hv2, hu) = (hn * v2, hn * u);
        let ww = Matrix3::from_columns(&[hv2, hu, hv2.cross(&hu)]);
        let r = ww * uu.transpose();
        let normal = v2.cross(&u);
        // H = R + T_d N^T with T_d = T / d.
        let t_d = (hn - r) * normal;
        for sign in [1.0, -1.0] {
            let n = normal * sign;
            let td = t_d * sign;
            let scale = td.norm();
            if scale < 1e-12 {
                continue;
            }
            if !reference.is_empty()
                && reference
                    .iter()
                    .any(|(p1, _)| n.dot(&p1.homogeneous()) <= 0.0)
            {
                continue;
            }
            if reference.is_empty() && n.z <= 0.0 {
                continue;
            }
            let Ok(pose) = RelativePose::new(r, -td) else {
                continue;
            };
            out.push(HomographyDecomposition {
                pose,
                plane_normal: n * scale,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::CheiralityFailure);
    }
    Ok(out)
}

/// The factorization of `h` whose rotation best maps the first gravity
/// direction onto the second, which resolves the two-fold ambiguity of
/// [`decompose_homography`] when gravity is known.
pub fn decompose_homography_with_gravity(
    h: &Matrix3<f64>,
    reference: &[(ImagePoint, ImagePoint)],
    gravity: (&GravityDirection, &GravityDirection),
) -> Result<HomographyDecomposition> {
    let (v1, v2) = (gravity.0.vector(), gravity.1.vector());
    let misfit = |d: &HomographyDecomposition| (d.pose.r * v1 - v2).norm();
    decompose_homography(h, reference)?
        .into_iter()
        .min_by(|a, b| misfit(a).total_cmp(&misfit(b)))
        .ok_or(Error::CheiralityFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{rotation_angle_deg, vector_angle_deg};
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_generating_pose_among_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..500 {
            let axis = Unit::new_normalize(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)));
            let r = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..0.8)).into_inner();
            let t = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let pose = RelativePose::new(r, t).unwrap();
            let n = Vector3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                1.0,
            )
            .normalize();
            let d = rng.random_range(3.0..8.0);
            let n_prime = n / d;
            let h = pose.r - pose.t * n_prime.transpose();
            // Points on the plane, visible in both views.
            let refs: Vec<_> = (0..6)
                .filter_map(|_| {
                    let ray = Vector3::new(
                        rng.random_range(-0.3..0.3),
                        rng.random_range(-0.3..0.3),
                        1.0,
                    );
                    let x = ray / n_prime.dot(&ray);
                    let x2 = pose.r * x - pose.t;
                    (x2.z > 0.1).then(|| {
                        (
                            ImagePoint::new(x.x / x.z, x.y / x.z).unwrap(),
                            ImagePoint::new(x2.x / x2.z, x2.y / x2.z).unwrap(),
                        )
                    })
                })
                .collect();
            if refs.len() < 2 {
                continue;
            }
            let scale: f64 = rng.random_range(-3.0..3.0);
            if scale.abs() < 0.1 {
                continue;
            }
            let cands = decompose_homography(&(h * scale), &refs).unwrap();
            assert!(cands.len() <= 4);
            let best = cands
                .iter()
                .map(|c| {
                    rotation_angle_deg(&c.pose.r, &pose.r)
                        .max(vector_angle_deg(&c.pose.t, &pose.t))
                        .max(((c.plane_normal - n_prime).norm()) / n_prime.norm())
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-7, "best candidate off by {best}");
            for c in &cands {
                let rebuilt = c.pose.r - c.pose.t * c.plane_normal.transpose();
                let hn = h / h.norm();
                let rn = rebuilt / rebuilt.norm();
                assert!((hn - rn).norm() < 1e-8 || (hn + rn).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn pure_rotation_is_degenerate() {
        let r = Rotation3::from_euler_angles(0.1, 0.2, 0.3).into_inner();
        assert!(matches!(
            decompose_homography(&r, &[]),
            Err(Error::DegenerateConfiguration(_))
        ));
    }
}
