use nalgebra::{Matrix2x3, Matrix3, SMatrix, SVector, Vector3};

use super::polynomial::Degree6Polynomial;
use crate::error::Result;
use crate::geometry::{inverse_transpose, skew, AffineCorrespondence, GravityDirection};

/// Rotation taking `v` onto the y-axis `[0, 1, 0]`.
///
/// Rodrigues rotation about `v x y` by the angle between `v` and `y`. The two
/// axis-less cases are fixed by convention: `v = y` gives the identity and
/// `v = -y` a half turn about the x-axis.
pub fn align_to_gravity(v: &GravityDirection) -> Matrix3<f64> {
    let v = v.vector();
    // sin and cos of the angle between v and y, computed without arccos.
    let sin = v.x.hypot(v.z);
    let cos = v.y;
    if sin < 1e-15 {
        return if cos > 0.0 {
            Matrix3::identity()
        } else {
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
        };
    }
    let axis = Vector3::new(-v.z / sin, 0.0, v.x / sin);
    let k = skew(&axis);
    Matrix3::identity() + k * sin + k * k * (1.0 - cos)
}

/// An affine correspondence expressed in the two gravity-aligned frames.
///
/// `b` is `A^{-T}` times the first two columns of `R1` (as rows), `c` the
/// first two columns of `R2` (as rows); with them the epipolar normals are
/// `n1 = B R_y^T [t']x^T q2` and `n2 = C [t']x R_y q1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityAlignedProblem {
    pub r1: Matrix3<f64>,
    pub r2: Matrix3<f64>,
    pub q1: Vector3<f64>,
    pub q2: Vector3<f64>,
    pub b: Matrix2x3<f64>,
    pub c: Matrix2x3<f64>,
}

pub fn build_gravity_problem(
    ac: &AffineCorrespondence,
    v1: &GravityDirection,
    v2: &GravityDirection,
) -> Result<GravityAlignedProblem> {
    let a_inv_t = inverse_transpose(&ac.a)?;
    let r1 = align_to_gravity(v1);
    let r2 = align_to_gravity(v2);
    let r1_cols: Matrix2x3<f64> = r1.transpose().fixed_rows::<2>(0).into_owned();
    let c: Matrix2x3<f64> = r2.transpose().fixed_rows::<2>(0).into_owned();
    Ok(GravityAlignedProblem {
        r1,
        r2,
        q1: r1 * ac.p1.homogeneous(),
        q2: r2 * ac.p2.homogeneous(),
        b: a_inv_t * r1_cols,
        c,
    })
}

/// `(1 + x^2) R_y(x)` with `x = tan(phi / 2)`.
pub(crate) fn scaled_y_rotation(x: f64) -> Matrix3<f64> {
    let x2 = x * x;
    Matrix3::new(
        1.0 - x2,
        0.0,
        -2.0 * x,
        0.0,
        1.0 + x2,
        0.0,
        2.0 * x,
        0.0,
        1.0 - x2,
    )
}

/// Rotation about the y-axis parametrized by `x = tan(phi / 2)`.
pub fn y_rotation(x: f64) -> Matrix3<f64> {
    scaled_y_rotation(x) / (1.0 + x * x)
}

/// The 3x3 matrix `M(x)` with `M(x) t' = 0` exactly when `(x, t')` satisfies
/// the epipolar constraint (row 0) and the two affine constraints (rows 1-2),
/// all multiplied by `1 + x^2`.
pub fn hidden_variable_matrix(prob: &GravityAlignedProblem, x: f64) -> Matrix3<f64> {
    let w = scaled_y_rotation(x) * prob.q1;
    // q2^T [t']x w = t'^T (w x q2)
    let row0 = w.cross(&prob.q2);
    // B R^T [t']x^T q2 + C [t']x w = (B R^T [q2]x - C [w]x) t'
    let affine = prob.b * scaled_y_rotation(x).transpose() * skew(&prob.q2) - prob.c * skew(&w);
    let mut m = Matrix3::zeros();
    m.row_mut(0).copy_from(&row0.transpose());
    m.fixed_rows_mut::<2>(1).copy_from(&affine);
    m
}

/// Chebyshev nodes of the first kind on `[-1, 1]` used to interpolate `det M(x)`.
fn interpolation_nodes() -> [f64; 7] {
    std::array::from_fn(|j| ((2 * j + 1) as f64 * std::f64::consts::PI / 14.0).cos())
}

/// Coefficients of the degree-6 polynomial `det M(x)`, obtained by sampling
/// the determinant at seven Chebyshev nodes and solving the Vandermonde system.
pub fn determinant_polynomial(prob: &GravityAlignedProblem) -> Degree6Polynomial {
    let nodes = interpolation_nodes();
    let vandermonde = SMatrix::<f64, 7, 7>::from_fn(|r, c| nodes[r].powi(c as i32));
    let values =
        SVector::<f64, 7>::from_fn(|r, _| hidden_variable_matrix(prob, nodes[r]).determinant());
    let coeffs = vandermonde
        .lu()
        .solve(&values)
        .expect("Vandermonde matrix on distinct nodes is invertible");
    Degree6Polynomial::from_coefficients(coeffs.into())
}

/// Upper bound on `|det M(x)|` over the interpolation nodes (Hadamard's
/// inequality with the Frobenius norm); the reference scale for deciding that
/// the determinant vanishes identically.
pub(crate) fn determinant_scale(prob: &GravityAlignedProblem) -> f64 {
    interpolation_nodes()
        .iter()
        .map(|&x| hidden_variable_matrix(prob, x).norm().powi(3))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImagePoint;
    use approx::assert_relative_eq;
    use nalgebra::Matrix2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gravity(rng: &mut impl Rng) -> GravityDirection {
        GravityDirection::new(Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn random_ac(rng: &mut impl Rng) -> AffineCorrespondence {
        AffineCorrespondence::new(
            ImagePoint::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)).unwrap(),
            ImagePoint::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)).unwrap(),
            Matrix2::new(
                rng.random_range(0.5..1.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.5..1.5),
            ),
        )
        .unwrap()
    }

    #[test]
    fn alignment_special_cases() {
        let down = GravityDirection::down();
        assert_eq!(
            align_to_gravity(&down),
            Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
        );
        let up = GravityDirection::new(Vector3::y()).unwrap();
        assert_eq!(align_to_gravity(&up), Matrix3::identity());
        let side = GravityDirection::new(Vector3::x()).unwrap();
        let r = align_to_gravity(&side);
        assert_relative_eq!(r * Vector3::x(), Vector3::y(), epsilon = 1e-15);
        // Quarter turn about +z.
        assert_relative_eq!(
            r,
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn alignment_is_a_rotation_onto_y() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v = random_gravity(&mut rng);
            let r = align_to_gravity(&v);
            assert_relative_eq!(r * v.vector(), Vector3::y(), epsilon = 1e-9);
            assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
        // Nearly antipodal directions stay accurate.
        let v = GravityDirection::new(Vector3::new(1e-13, -1.0, -2e-13)).unwrap();
        assert_relative_eq!(
            align_to_gravity(&v) * v.vector(),
            Vector3::y(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn gravity_problem_by_hand() {
        let ac = AffineCorrespondence::new(
            ImagePoint::new(0.0, 0.0).unwrap(),
            ImagePoint::new(0.0, 0.0).unwrap(),
            Matrix2::identity(),
        )
        .unwrap();
        let down = GravityDirection::down();
        let prob = build_gravity_problem(&ac, &down, &down).unwrap();
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert_eq!(prob.r1, flip);
        assert_eq!(prob.r2, flip);
        assert_eq!(prob.q1, Vector3::new(0.0, 0.0, -1.0));
        assert_eq!(prob.c, Matrix2x3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0));

        let up = GravityDirection::new(Vector3::y()).unwrap();
        let prob = build_gravity_problem(&ac, &up, &up).unwrap();
        assert_eq!(
            (prob.r1, prob.r2),
            (Matrix3::identity(), Matrix3::identity())
        );
        assert_eq!(prob.q1, ac.p1.homogeneous());
        assert_eq!(prob.q2, ac.p2.homogeneous());
    }

    #[test]
    fn b_reconstructs_from_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let ac = random_ac(&mut rng);
            let prob =
                build_gravity_problem(&ac, &random_gravity(&mut rng), &random_gravity(&mut rng))
                    .unwrap();
            // A^T B must give back the first two columns of R1, as rows.
            let back = ac.a.transpose() * prob.b;
            for i in 0..2 {
                for j in 0..3 {
                    assert_relative_eq!(back[(i, j)], prob.r1[(j, i)], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn hidden_variable_matrix_is_the_constraint_jacobian() {
        // The constraints are linear in t', so M(x) e_k equals the constraint
        // values at t' = e_k; compare with a direct evaluation through E.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let ac = random_ac(&mut rng);
            let (v1, v2) = (random_gravity(&mut rng), random_gravity(&mut rng));
            let prob = build_gravity_problem(&ac, &v1, &v2).unwrap();
            let x: f64 = rng.random_range(-3.0..3.0);
            let m = hidden_variable_matrix(&prob, x);
            let t_prime = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let e = prob.r2.transpose() * skew(&t_prime) * y_rotation(x) * prob.r1;
            let epi = ac.p2.homogeneous().dot(&(e * ac.p1.homogeneous()));
            let aff = crate::geometry::affine_epipolar_residual(&ac, &e).unwrap();
            let direct = Vector3::new(epi, aff.x, aff.y) * (1.0 + x * x);
            assert_relative_eq!(m * t_prime, direct, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn x_zero_row_is_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ac = random_ac(&mut rng);
        let prob = build_gravity_problem(&ac, &random_gravity(&mut rng), &random_gravity(&mut rng))
            .unwrap();
        let m = hidden_variable_matrix(&prob, 0.0);
        let expected = prob.q1.cross(&prob.q2);
        assert_relative_eq!(m.row(0).transpose(), expected, epsilon = 1e-15);
    }

    #[test]
    fn interpolated_polynomial_matches_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let ac = random_ac(&mut rng);
            let prob =
                build_gravity_problem(&ac, &random_gravity(&mut rng), &random_gravity(&mut rng))
                    .unwrap();
            let poly = determinant_polynomial(&prob);
            for x in [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0] {
                let det = hidden_variable_matrix(&prob, x).determinant();
                let scale = poly.abs_eval(x).max(1e-300);
                assert!((poly.eval(x) - det).abs() <= 1e-9 * scale, "x = {x}");
            }
        }
    }
}
