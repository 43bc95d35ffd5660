use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector2};

use crate::error::{Error, Result};
use crate::geometry::{ImagePoint, ModelHypothesis};

/// Similarity moving the centroid to the origin with mean distance `sqrt(2)`.
pub(crate) fn hartley_transform<'a>(
    points: impl Iterator<Item = &'a ImagePoint> + Clone,
) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let centroid = points
        .clone()
        .fold(Vector2::zeros(), |acc, p| acc + p.coords())
        / n;
    let mean_dist = points.map(|p| (p.coords() - centroid).norm()).sum::<f64>() / n;
    if mean_dist < 1e-15 {
        return Err(Error::DegenerateConfiguration("coincident points"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    ))
}

fn apply(t: &Matrix3<f64>, p: &ImagePoint) -> ImagePoint {
    ImagePoint {
        u: t[(0, 0)] * p.u + t[(0, 2)],
        v: t[(1, 1)] * p.v + t[(1, 2)],
    }
}

/// Unit right singular vector of the smallest singular value of an `m x 9`
/// system, plus the singular values sorted in descending order. Tall systems
/// are first reduced to their 9 x 9 triangular QR factor, which has the same
/// singular values and right singular vectors; short ones are zero-padded so
/// that the full null space is available.
pub(crate) fn smallest_right_singular_vector(a: DMatrix<f64>) -> (SVector<f64, 9>, Vec<f64>) {
    assert_eq!(a.ncols(), 9);
    let square: SMatrix<f64, 9, 9> = if a.nrows() > 9 {
        a.qr().r().fixed_view::<9, 9>(0, 0).into_owned()
    } else {
        let mut m = SMatrix::<f64, 9, 9>::zeros();
        m.view_mut((0, 0), (a.nrows(), 9)).copy_from(&a);
        m
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s = &svd.singular_values;
    let mut order: [usize; 9] = std::array::from_fn(|i| i);
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sorted = order.iter().map(|&i| s[i]).collect();
    (v_t.row(order[8]).transpose(), sorted)
}

fn collinear(a: &ImagePoint, b: &ImagePoint, c: &ImagePoint) -> bool {
    let ab = b.coords() - a.coords();
    let ac = c.coords() - a.coords();
    let cross = ab.x * ac.y - ab.y * ac.x;
    cross.abs() <= 1e-9 * ab.norm_squared().max(ac.norm_squared()).max(1e-300)
}

/// Direct linear transform for `n >= 4` point pairs with Hartley normalization.
pub fn fit_homography_dlt(matches: &[(ImagePoint, ImagePoint)]) -> Result<ModelHypothesis> {
    if matches.len() < 4 {
        return Err(Error::DegenerateConfiguration(
            "homography needs at least 4 matches",
        ));
    }
    let t1 = hartley_transform(matches.iter().map(|m| &m.0))?;
    let t2 = hartley_transform(matches.iter().map(|m| &m.1))?;
    let mut a = DMatrix::<f64>::zeros(2 * matches.len(), 9);
    for (i, (p1, p2)) in matches.iter().enumerate() {
        let (x, y) = {
            let q = apply(&t1, p1);
            (q.u, q.v)
        };
        let (xp, yp) = {
            let q = apply(&t2, p2);
            (q.u, q.v)
        };
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, xp * x, xp * y, xp];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    let (h, s) = smallest_right_singular_vector(a);
    // The solution must be isolated: the second smallest singular value may
    // not vanish.
    if s[7] <= 1e-10 * s[0] {
        return Err(Error::DegenerateConfiguration("rank-deficient DLT system"));
    }
    let hn = Matrix3::from_row_slice(h.as_slice());
    let t2_inv = t2.try_inverse().expect("similarity is invertible");
    ModelHypothesis::homography(t2_inv * hn * t1)
}

/// Homography through exactly four point pairs, no three collinear in
/// either image.
pub fn solve_homography_4pc(matches: &[(ImagePoint, ImagePoint); 4]) -> Result<ModelHypothesis> {
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        if collinear(&matches[i].0, &matches[j].0, &matches[k].0)
            || collinear(&matches[i].1, &matches[j].1, &matches[k].1)
        {
            return Err(Error::DegenerateConfiguration("three collinear points"));
        }
    }
    fit_homography_dlt(matches)
}
