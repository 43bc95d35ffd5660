use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};

use crate::geometry::{
    decompose_essential_with_points, skew, ImagePoint, ModelHypothesis, ModelKind, RelativePose,
};

const MAX_ITERATIONS: usize = 50;
const GRADIENT_TOL: f64 = 1e-10;
/// Relative cost decrease below which a step counts as converged.
const COST_TOL: f64 = 1e-10;
const DEGENERATE_DENOMINATOR: f64 = 1e-15;

/// Weighted least-squares normal equations at one point of a manifold:
/// `sum w r^2`, `J^T W J` and `J^T W r`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NormalEquations<const P: usize> {
    pub cost: f64,
    pub jtj: SMatrix<f64, P, P>,
    pub g: SVector<f64, P>,
}

impl<const P: usize> NormalEquations<P> {
    fn new() -> Self {
        Self {
            cost: 0.0,
            jtj: SMatrix::zeros(),
            g: SVector::zeros(),
        }
    }

    fn add(&mut self, w: f64, r: f64, row: &SVector<f64, P>) {
        self.cost += w * r * r;
        self.jtj.ger(w, row, row, 1.0);
        self.g.axpy(w * r, row, 1.0);
    }

    fn finite(self) -> Option<Self> {
        (self.cost.is_finite() && self.g.iter().all(|x| x.is_finite())).then_some(self)
    }
}

/// Minimizes a weighted sum of squared residuals over a manifold given by
/// `retract`; `linearize` returns the normal equations at zero local
/// perturbation. Only cost-decreasing steps are taken.
fn levenberg_marquardt<S: Clone, const P: usize>(
    start: S,
    linearize: impl Fn(&S) -> Option<NormalEquations<P>>,
    retract: impl Fn(&S, &SVector<f64, P>) -> Option<S>,
) -> S {
    let Some(mut lin) = linearize(&start) else {
        return start;
    };
    let mut state = start;
    let mut lambda = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        if lin.g.norm() < GRADIENT_TOL {
            break;
        }
        let mut improved = false;
        let mut converged = false;
        while lambda < 1e16 {
            let mut a = lin.jtj;
            for i in 0..P {
                a[(i, i)] += lambda * lin.jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| -c.solve(&lin.g)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = retract(&state, &delta).and_then(|s| linearize(&s).map(|l| (s, l)));
            match candidate {
                Some((s, next)) if next.cost < lin.cost => {
                    converged = lin.cost - next.cost <= COST_TOL * lin.cost;
                    state = s;
                    lin = next;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved || converged {
            break;
        }
    }
    state
}

/// Orthonormal basis of the plane perpendicular to the unit vector `t`.
fn tangent_basis(t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let axis = if t.x.abs() <= t.y.abs() && t.x.abs() <= t.z.abs() {
        Vector3::x()
    } else if t.y.abs() <= t.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let b1 = t.cross(&axis).normalize();
    (b1, t.cross(&b1))
}

/// Applies `(omega, alpha, beta)`: `R <- exp([omega]x) R`,
/// `t <- normalize(t + alpha b1 + beta b2)`.
pub(crate) fn retract_pose(pose: &RelativePose, delta: &SVector<f64, 5>) -> Option<RelativePose> {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let (b1, b2) = tangent_basis(&pose.t);
    let r = Rotation3::new(omega).into_inner() * pose.r;
    let t = pose.t + b1 * delta[3] + b2 * delta[4];
    RelativePose::new(r, t).ok()
}

/// Calls `visit(i, r, dr)` with the signed Sampson residual
/// `x2^T E x1 / sqrt(D)` of every pair and its gradient with respect to the
/// five local pose parameters of [`retract_pose`]. Pairs with a vanishing
/// denominator are skipped.
pub(crate) fn sampson_rows(
    pose: &RelativePose,
    inliers: &[(ImagePoint, ImagePoint)],
    mut visit: impl FnMut(usize, f64, &SVector<f64, 5>),
) {
    let tx = skew(&pose.t);
    let e = tx * pose.r;
    let (b1, b2) = tangent_basis(&pose.t);
    let de: [Matrix3<f64>; 5] = [
        tx * skew(&Vector3::x()) * pose.r,
        tx * skew(&Vector3::y()) * pose.r,
        tx * skew(&Vector3::z()) * pose.r,
        skew(&b1) * pose.r,
        skew(&b2) * pose.r,
    ];
    for (i, (p1, p2)) in inliers.iter().enumerate() {
        let x1 = p1.homogeneous();
        let x2 = p2.homogeneous();
        let l2 = e * x1;
        let l1 = e.transpose() * x2;
        let a = x2.dot(&l2);
        let d = l2.x * l2.x + l2.y * l2.y + l1.x * l1.x + l1.y * l1.y;
        if d < DEGENERATE_DENOMINATOR {
            continue;
        }
        let sd = d.sqrt();
        // dr/dE = x2 x1^T / sqrt(D) - a / (2 D^{3/2}) dD/dE
        let mut dd = Matrix3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                let mut v = 0.0;
                if row < 2 {
                    v += 2.0 * l2[row] * x1[col];
                }
                if col < 2 {
                    v += 2.0 * l1[col] * x2[row];
                }
                dd[(row, col)] = v;
            }
        }
        let g = x2 * x1.transpose() / sd - dd * (a / (2.0 * d * sd));
        let dr = SVector::<f64, 5>::from_fn(|k, _| g.component_mul(&de[k]).sum());
        visit(i, a / sd, &dr);
    }
}

/// A homography scaled so that one entry equals `+-1`; the remaining eight
/// are the free parameters.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GaugedHomography {
    pub h: Matrix3<f64>,
    pub fixed: usize,
}

impl GaugedHomography {
    /// Fixes `h33` unless it is too small relative to the whole matrix, in
    /// which case the largest-magnitude entry is fixed instead.
    pub fn new(h: &Matrix3<f64>) -> Option<Self> {
        let n = h.norm();
        if !(n > 0.0) {
            return None;
        }
        let fixed = if h[(2, 2)].abs() >= 1e-3 * n {
            8
        } else {
            (0..9).max_by(|&a, &b| h[(a / 3, a % 3)].abs().total_cmp(&h[(b / 3, b % 3)].abs()))?
        };
        let scale = h[(fixed / 3, fixed % 3)].abs();
        Some(Self {
            h: h / scale,
            fixed,
        })
    }

    /// Row-major indices of the eight free entries.
    fn free_indices(&self) -> [usize; 8] {
        std::array::from_fn(|k| if k < self.fixed { k } else { k + 1 })
    }
}

pub(crate) fn retract_homography(
    g: &GaugedHomography,
    delta: &SVector<f64, 8>,
) -> Option<GaugedHomography> {
    let mut h = g.h;
    for (k, idx) in g.free_indices().into_iter().enumerate() {
        h[(idx / 3, idx % 3)] += delta[k];
    }
    Some(GaugedHomography { h, fixed: g.fixed })
}

/// Calls `visit(i, r, dr)` with the forward and backward transfer residuals
/// of every pair (forward u, v, then backward u, v) and their gradients with
/// respect to the eight free entries. Returns `None`, possibly after some
/// visits, when `H` is singular or a point maps to infinity.
pub(crate) fn transfer_rows(
    g: &GaugedHomography,
    inliers: &[(ImagePoint, ImagePoint)],
    mut visit: impl FnMut(usize, &[f64; 4], &[SVector<f64, 8>; 4]),
) -> Option<()> {
    let h = g.h;
    let h_inv = h.try_inverse()?;
    let free = g.free_indices();
    for (i, (p1, p2)) in inliers.iter().enumerate() {
        let x1 = p1.homogeneous();
        let x2 = p2.homogeneous();
        let y = h * x1;
        let z = h_inv * x2;
        if y.z.abs() < 1e-12 || z.z.abs() < 1e-12 {
            return None;
        }
        let r = [
            y.x / y.z - p2.u,
            y.y / y.z - p2.v,
            z.x / z.z - p1.u,
            z.y / z.z - p1.v,
        ];
        let mut rows = [SVector::<f64, 8>::zeros(); 4];
        let proj = |v: &Vector3<f64>, dv: &Vector3<f64>| {
            (
                dv.x / v.z - v.x * dv.z / (v.z * v.z),
                dv.y / v.z - v.y * dv.z / (v.z * v.z),
            )
        };
        for (k, &idx) in free.iter().enumerate() {
            let (a, b) = (idx / 3, idx % 3);
            // dy = e_a x1_b
            let mut dy = Vector3::zeros();
            dy[a] = x1[b];
            // d(H^-1) = -H^-1 dH H^-1, so dz = -H^-1[:, a] z_b
            let dz = -h_inv.column(a) * z[b];
            let (fu, fv) = proj(&y, &dy);
            let (bu, bv) = proj(&z, &dz);
            rows[0][k] = fu;
            rows[1][k] = fv;
            rows[2][k] = bu;
            rows[3][k] = bv;
        }
        visit(i, &r, &rows);
    }
    Some(())
}

fn sampson_normal(
    pose: &RelativePose,
    inliers: &[(ImagePoint, ImagePoint)],
    weights: &[f64],
) -> Option<NormalEquations<5>> {
    let mut ne = NormalEquations::new();
    sampson_rows(pose, inliers, |i, r, dr| ne.add(weights[i], r, dr));
    ne.finite()
}

fn transfer_normal(
    g: &GaugedHomography,
    inliers: &[(ImagePoint, ImagePoint)],
    weights: &[f64],
) -> Option<NormalEquations<8>> {
    let mut ne = NormalEquations::new();
    transfer_rows(g, inliers, |i, r, rows| {
        for (rk, row) in r.iter().zip(rows) {
            ne.add(weights[i], *rk, row);
        }
    })?;
    ne.finite()
}

/// Per-pair residual magnitudes of `model`, or `None` if it cannot be
/// linearized.
fn pair_residuals(
    model: &ModelHypothesis,
    pose: Option<&RelativePose>,
    inliers: &[(ImagePoint, ImagePoint)],
) -> Option<Vec<f64>> {
    let mut out = vec![0.0; inliers.len()];
    match model.kind {
        ModelKind::Essential => sampson_rows(pose?, inliers, |i, r, _| out[i] = r.abs()),
        ModelKind::Homography => {
            transfer_rows(
                &GaugedHomography::new(&model.matrix)?,
                inliers,
                |i, r, _| {
                    out[i] = (0.5 * r.iter().map(|x| x * x).sum::<f64>()).sqrt();
                },
            )?;
        }
    }
    out.iter().all(|x| x.is_finite()).then_some(out)
}

fn refine_weighted(
    model: &ModelHypothesis,
    inliers: &[(ImagePoint, ImagePoint)],
    weights: &[f64],
) -> ModelHypothesis {
    match model.kind {
        ModelKind::Essential => {
            let start = match model.pose {
                Some(p) => p,
                None => match decompose_essential_with_points(&model.matrix, inliers) {
                    Ok(p) => p,
                    Err(_) => return *model,
                },
            };
            let pose =
                levenberg_marquardt(start, |p| sampson_normal(p, inliers, weights), retract_pose);
            if pose == start && model.pose.is_some() {
                return *model;
            }
            ModelHypothesis::essential_from_pose(pose)
        }
        ModelKind::Homography => {
            let Some(start) = GaugedHomography::new(&model.matrix) else {
                return *model;
            };
            let refined = levenberg_marquardt(
                start,
                |g| transfer_normal(g, inliers, weights),
                retract_homography,
            );
            if refined.h == start.h {
                return *model;
            }
            ModelHypothesis::homography(refined.h).unwrap_or(*model)
        }
    }
}

/// Levenberg-Marquardt polish of a model on its inliers.
///
/// Essential matrices minimize the squared Sampson distances over a rotation
/// and a unit translation; homographies minimize the squared forward and
/// backward transfer errors over eight entries with the ninth held at `+-1`.
/// The objective never increases, and the input is returned unchanged when
/// there are too few inliers or no step improves it.
pub fn refine_pose_nonlinear(
    model: &ModelHypothesis,
    inliers: &[(ImagePoint, ImagePoint)],
) -> ModelHypothesis {
    if inliers.len() < model.kind.refit_sample_size() {
        return *model;
    }
    refine_weighted(model, inliers, &vec![1.0; inliers.len()])
}

const IRLS_ROUNDS: usize = 5;

/// Refinement that tolerates a minority of wrong pairs: iteratively
/// reweighted least squares with Cauchy weights `1 / (1 + (r / scale)^2)`,
/// each round a Levenberg-Marquardt solve with weights from the previous
/// solution.
pub fn refine_pose_robust(
    model: &ModelHypothesis,
    inliers: &[(ImagePoint, ImagePoint)],
    scale: f64,
) -> ModelHypothesis {
    if inliers.len() < model.kind.refit_sample_size() || !(scale > 0.0) {
        return *model;
    }
    let mut current = *model;
    for _ in 0..IRLS_ROUNDS {
        let pose = match (current.kind, current.pose) {
            (ModelKind::Essential, None) => {
                decompose_essential_with_points(&current.matrix, inliers).ok()
            }
            (_, p) => p,
        };
        let Some(res) = pair_residuals(&current, pose.as_ref(), inliers) else {
            break;
        };
        let weights: Vec<f64> = res
            .iter()
            .map(|r| 1.0 / (1.0 + (r / scale).powi(2)))
            .collect();
        let next = refine_weighted(&current, inliers, &weights);
        if next == current {
            break;
        }
        current = next;
    }
    current
}
