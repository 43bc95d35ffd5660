use nalgebra::{DMatrix, Matrix3};

use super::dlt::{hartley_transform, smallest_right_singular_vector};
use crate::error::{Error, Result};
use crate::geometry::{
    decompose_essential_with_points, project_to_essential, ImagePoint, ModelHypothesis,
};

/// Least-squares essential matrix from `n >= 8` normalized point pairs:
/// Hartley-normalized linear solve, then projection onto the essential
/// manifold.
///
/// The pose is attached when some factorization puts a majority of the
/// points in front of both cameras.
pub fn refit_essential_8pt(matches: &[(ImagePoint, ImagePoint)]) -> Result<ModelHypothesis> {
    if matches.len() < 8 {
        return Err(Error::DegenerateConfiguration(
            "eight-point refit needs at least 8 matches",
        ));
    }
    let t1 = hartley_transform(matches.iter().map(|m| &m.0))?;
    let t2 = hartley_transform(matches.iter().map(|m| &m.1))?;
    let mut a = DMatrix::<f64>::zeros(matches.len(), 9);
    for (i, (p1, p2)) in matches.iter().enumerate() {
        let x1 = t1 * p1.homogeneous();
        let x2 = t2 * p2.homogeneous();
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = x2[r] * x1[c];
            }
        }
    }
    let (f, s) = smallest_right_singular_vector(a);
    if s[7] <= 1e-10 * s[0] {
        return Err(Error::DegenerateConfiguration(
            "rank-deficient epipolar system",
        ));
    }
    let f = Matrix3::from_row_slice(f.as_slice());
    let e = project_to_essential(&(t2.transpose() * f * t1));
    let e = project_to_essential(&(e / e.norm()));
    let model = ModelHypothesis::essential(e)?;
    Ok(
        match decompose_essential_with_points(&model.matrix, matches) {
            Ok(pose) => model.with_pose(pose),
            Err(_) => model,
        },
    )
}
