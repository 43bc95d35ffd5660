use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use super::gravity::{
    build_gravity_problem, determinant_polynomial, determinant_scale, hidden_variable_matrix,
    y_rotation,
};
use super::polynomial::real_roots;
use crate::error::{Error, Result};
use crate::geometry::{
    skew, AffineCorrespondence, GravityDirection, ModelHypothesis, RelativePose,
};

/// A relative pose generated from one root `x = tan(phi / 2)` of the
/// determinant polynomial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseCandidate {
    pub x: f64,
    pub pose: RelativePose,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverOutput {
    /// Ordered by root ascending, `+t'` before `-t'`.
    pub poses: Vec<PoseCandidate>,
    /// One homography per root (the translation sign folds out).
    pub homographies: Vec<ModelHypothesis>,
}

/// Unit null vector of `m` from its smallest singular value.
fn kernel(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let (s1, s2, s3) = (s[order[0]], s[order[1]], s[order[2]]);
    if s2 - s3 <= 1e-10 * s1 {
        return Err(Error::DegenerateKernel);
    }
    if s3 > 1e-8 * m.norm() {
        // Not a root of det M to working precision.
        return Err(Error::DegenerateKernel);
    }
    Ok(v_t.row(order[2]).transpose().normalize())
}

/// Relative pose from a single affine correspondence and the gravity
/// direction in both (normalized) views.
///
/// Both signs of the translation are emitted for every root; the kernel of
/// `M(x)` does not fix it. When `det M(x)` vanishes identically (for example a
/// point on the optical axis with an identity affinity and gravity along the
/// image y-axis) the yaw is unobservable and only `x = 0` is returned.
pub fn solve_pose_1ac_gravity(
    ac: &AffineCorrespondence,
    v1: &GravityDirection,
    v2: &GravityDirection,
) -> Result<SolverOutput> {
    let prob = build_gravity_problem(ac, v1, v2)?;
    let poly = determinant_polynomial(&prob);
    let roots = if poly.max_abs_coefficient() <= 1e-12 * determinant_scale(&prob) {
        // Every yaw admits a translation: the correspondence does not observe
        // the rotation about gravity. Report the zero-yaw member of the family.
        vec![0.0]
    } else {
        real_roots(&poly)?
    };
    let mut poses = Vec::with_capacity(2 * roots.len());
    for x in roots {
        let m = hidden_variable_matrix(&prob, x);
        let Ok(t_prime) = kernel(&m) else {
            continue;
        };
        let r = prob.r2.transpose() * y_rotation(x) * prob.r1;
        let t = prob.r2.transpose() * t_prime;
        for sign in [1.0, -1.0] {
            if let Ok(pose) = RelativePose::new(r, t * sign) {
                poses.push(PoseCandidate { x, pose });
            }
        }
    }
    if poses.is_empty() {
        return Err(Error::NoRealRoots);
    }
    Ok(SolverOutput {
        poses,
        homographies: Vec::new(),
    })
}

/// Accumulates a constraint `sum w_ij h_ij = 0` on `H = R - t n'^T` as a row
/// of the linear system in `n'`.
fn plane_row(w: &Matrix3<f64>, r: &Matrix3<f64>, t: &Vector3<f64>) -> (Vector3<f64>, f64) {
    // sum_ij w_ij (R_ij - t_i n_j) = 0  <=>  (W^T t) . n = <W, R>
    (w.transpose() * t, w.component_mul(r).sum())
}

/// Plane normal `n'` such that `R - t n'^T` agrees with the affine
/// correspondence: two rows of `p2 x (H p1) = 0` plus the four
/// affine-homography equations, solved in the least-squares sense.
pub fn plane_from_pose(ac: &AffineCorrespondence, pose: &RelativePose) -> Result<Vector3<f64>> {
    let (u1, v1) = (ac.p1.u, ac.p1.v);
    let (u2, v2) = (ac.p2.u, ac.p2.v);
    let x1 = ac.p1.homogeneous();
    let p2x = skew(&ac.p2.homogeneous());

    let mut rows: Vec<(Vector3<f64>, f64)> = Vec::with_capacity(7);
    for k in 0..3 {
        let w = p2x.row(k).transpose() * x1.transpose();
        rows.push(plane_row(&w, &pose.r, &pose.t));
    }
    // Keep the two cross-product rows with the largest coefficients.
    let weakest = (0..3)
        .min_by(|&a, &b| rows[a].0.norm().total_cmp(&rows[b].0.norm()))
        .expect("three rows");
    rows.remove(weakest);

    // h_ij - p2_i h_3j - a_ij (h31 u1 + h32 v1 + h33) = 0, i, j in {0, 1}
    let p2 = [u2, v2];
    for i in 0..2 {
        for j in 0..2 {
            let a = ac.a[(i, j)];
            let mut w = Matrix3::zeros();
            w[(i, j)] += 1.0;
            w[(2, j)] -= p2[i];
            w[(2, 0)] -= a * u1;
            w[(2, 1)] -= a * v1;
            w[(2, 2)] -= a;
            rows.push(plane_row(&w, &pose.r, &pose.t));
        }
    }

    let lhs = SMatrix::<f64, 6, 3>::from_fn(|r, c| rows[r].0[c]);
    let rhs = SVector::<f64, 6>::from_fn(|r, _| rows[r].1);
    let svd = lhs.svd(true, true);
    let s = &svd.singular_values;
    let s_max = s.max();
    if s.min() <= 1e-10 * s_max {
        return Err(Error::RankDeficientSystem);
    }
    let n = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::RankDeficientSystem)?;
    Ok(n)
}

/// Homographies from a single affine correspondence with known gravity:
/// the pose solver followed by a least-squares fit of the plane.
pub fn solve_homography_1ac_gravity(
    ac: &AffineCorrespondence,
    v1: &GravityDirection,
    v2: &GravityDirection,
) -> Result<SolverOutput> {
    let mut out = solve_pose_1ac_gravity(ac, v1, v2)?;
    let x1 = ac.p1.homogeneous();
    let mut last_root = None;
    for cand in &out.poses {
        // (R, t) and (R, -t) give (n', -n') and the same H.
        if last_root == Some(cand.x) {
            continue;
        }
        let Ok(n) = plane_from_pose(ac, &cand.pose) else {
            continue;
        };
        last_root = Some(cand.x);
        // Orient so the plane lies in front of the first camera.
        let (pose, n) = if n.dot(&x1) < 0.0 {
            (cand.pose.flipped(), -n)
        } else {
            (cand.pose, n)
        };
        if let Ok(h) = ModelHypothesis::homography_from_plane(pose, n) {
            out.homographies.push(h);
        }
    }
    if out.homographies.is_empty() {
        return Err(Error::RankDeficientSystem);
    }
    Ok(out)
}
