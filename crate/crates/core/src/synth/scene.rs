use nalgebra::{Matrix2, Matrix3, Rotation3, Unit, UnitQuaternion, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{
    AffineCorrespondence, CameraIntrinsics, GravityDirection, ImagePoint, RelativePose,
};
use crate::metrics::rotation_angle_deg;

/// Knobs of the scene generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub n_points: usize,
    /// All points on one plane (homography scenes).
    pub planar: bool,
    pub focal: f64,
    /// Image width and height in pixels; the principal point is the center.
    pub image_size: (f64, f64),
    /// Upper bound on the relative rotation angle.
    pub max_rotation_deg: f64,
    /// Range of the distance between the camera centers.
    pub baseline: (f64, f64),
    /// Distance of the scene center from the first camera.
    pub depth: f64,
    /// Half-width of the depth range of non-planar points.
    pub depth_spread: f64,
    /// Largest angle between a tangent-plane normal and the viewing ray.
    pub max_normal_angle_deg: f64,
    /// Fixes the relative pose (unit-length baseline) instead of sampling it.
    pub pose: Option<RelativePose>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_points: 100,
            planar: false,
            focal: 1000.0,
            image_size: (1000.0, 1000.0),
            max_rotation_deg: 60.0,
            baseline: (0.5, 2.0),
            depth: 6.0,
            depth_spread: 2.0,
            max_normal_angle_deg: 75.0,
            pose: None,
        }
    }
}

/// Ground truth of a synthetic two-view problem. Points and normals live in
/// the first camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub pose_gt: RelativePose,
    pub intrinsics: (CameraIntrinsics, CameraIntrinsics),
    /// Unit normal `n` and offset `d` of the plane `n^T X = d` (planar scenes).
    pub plane: Option<(Vector3<f64>, f64)>,
    pub gravity_gt: (GravityDirection, GravityDirection),
    pub points3d: Vec<Vector3<f64>>,
    /// Tangent-plane normal per point.
    pub normals: Vec<Vector3<f64>>,
    /// Center of the second camera in the first camera frame.
    pub camera2_center: Vector3<f64>,
    pub image_size: (f64, f64),
}

/// Grazing angle below which a tangent plane is rejected.
const GRAZING_DEG: f64 = 1.0;
/// Tangent planes generated for scenes keep this margin to grazing.
const GENERATION_MARGIN_DEG: f64 = 5.0;
const MAX_ATTEMPTS: usize = 1000;

pub(crate) fn uniform_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(q))
        .to_rotation_matrix()
        .into_inner()
}

pub(crate) fn uniform_direction(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

/// Random unit vector within `max_deg` of `axis`, uniform over the cap.
fn direction_in_cap(rng: &mut impl Rng, axis: &Vector3<f64>, max_deg: f64) -> Vector3<f64> {
    let cos_max = max_deg.to_radians().cos();
    let z = rng.random_range(cos_max..=1.0);
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let local = Vector3::new(s * phi.cos(), s * phi.sin(), z);
    let rot = Rotation3::rotation_between(&Vector3::z(), axis)
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    rot * local
}

/// Sine of the angle between a plane with unit normal `n` and the ray `ray`.
fn plane_ray_sine(n: &Vector3<f64>, ray: &Vector3<f64>) -> f64 {
    n.dot(ray).abs() / ray.norm()
}

impl SyntheticScene {
    pub fn relative_rotation(&self) -> &Matrix3<f64> {
        &self.pose_gt.r
    }

    /// Metric translation `t` of `X2 = R X1 - t`.
    pub fn translation(&self) -> Vector3<f64> {
        self.pose_gt.r * self.camera2_center
    }

    pub fn to_camera2(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.pose_gt.r * (x - self.camera2_center)
    }

    /// Pixel projections of a first-frame point into both images.
    pub fn project(&self, x: &Vector3<f64>) -> Result<(ImagePoint, ImagePoint)> {
        let p1 = ImagePoint::from_homogeneous(&(self.intrinsics.0.matrix() * x))?;
        let p2 = ImagePoint::from_homogeneous(&(self.intrinsics.1.matrix() * self.to_camera2(x)))?;
        Ok((p1, p2))
    }

    fn in_image(&self, p: &ImagePoint) -> bool {
        (0.0..=self.image_size.0).contains(&p.u) && (0.0..=self.image_size.1).contains(&p.v)
    }

    /// Plane-induced homography between the normalized views for the plane
    /// through `x` with normal `n`: `H = R - t n'^T` with `n' = n / (n^T x)`.
    pub fn normalized_homography(
        &self,
        x: &Vector3<f64>,
        n: &Vector3<f64>,
    ) -> Result<Matrix3<f64>> {
        let d = n.dot(x);
        if d.abs() < 1e-12 * x.norm() {
            return Err(Error::GrazingPlane);
        }
        Ok(self.pose_gt.r - self.translation() * (n / d).transpose())
    }

    /// Pixel homography of the plane through `x` with normal `n`.
    pub fn pixel_homography(&self, x: &Vector3<f64>, n: &Vector3<f64>) -> Result<Matrix3<f64>> {
        Ok(self.intrinsics.1.matrix()
            * self.normalized_homography(x, n)?
            * self.intrinsics.0.inverse())
    }

    /// Exact affine correspondences (pixel coordinates) of all points.
    pub fn correspondences(&self) -> Result<Vec<AffineCorrespondence>> {
        self.points3d
            .iter()
            .zip(&self.normals)
            .map(|(x, n)| {
                let (p1, p2) = self.project(x)?;
                AffineCorrespondence::new(p1, p2, exact_affine(self, x, n)?)
            })
            .collect()
    }
}

/// Jacobian, in pixels, of the point transfer between the two images induced
/// by the tangent plane with normal `n` through the first-frame point `x`.
pub fn exact_affine(
    scene: &SyntheticScene,
    x: &Vector3<f64>,
    n: &Vector3<f64>,
) -> Result<Matrix2<f64>> {
    let n = n.normalize();
    let grazing = GRAZING_DEG.to_radians().sin();
    if plane_ray_sine(&n, x) < grazing || plane_ray_sine(&n, &(x - scene.camera2_center)) < grazing
    {
        return Err(Error::GrazingPlane);
    }
    let h = scene.pixel_homography(x, &n)?;
    let p1 = scene.intrinsics.0.matrix() * x;
    let p1 = p1 / p1.z;
    let y = h * p1;
    if y.z.abs() < 1e-12 {
        return Err(Error::PointAtInfinity);
    }
    let (u2, v2) = (y.x / y.z, y.y / y.z);
    Ok(Matrix2::new(
        h[(0, 0)] - u2 * h[(2, 0)],
        h[(0, 1)] - u2 * h[(2, 1)],
        h[(1, 0)] - v2 * h[(2, 0)],
        h[(1, 1)] - v2 * h[(2, 1)],
    ) / y.z)
}

/// Samples cameras, gravity and points per `params`.
///
/// The first camera sits at the origin with a uniformly random orientation
/// in the world, where gravity is `[0, -1, 0]`. The second camera center is
/// a random direction at a random baseline; it looks at the scene center
/// with a random roll, and draws whose relative rotation exceeds the bound
/// are rejected.
pub fn generate_scene(params: &SceneParams, rng: &mut impl Rng) -> Result<SyntheticScene> {
    let (w, h) = params.image_size;
    let k = CameraIntrinsics::from_focal(params.focal, w / 2.0, h / 2.0)?;
    let center = Vector3::new(0.0, 0.0, params.depth);
    let margin = GENERATION_MARGIN_DEG.to_radians().sin();

    for _ in 0..MAX_ATTEMPTS {
        let world_to_cam1 = uniform_rotation(rng);
        let (r, c2) = match params.pose {
            Some(pose) => (pose.r, pose.r.transpose() * pose.t),
            None => {
                let c2 = uniform_direction(rng)
                    * rng.random_range(params.baseline.0..=params.baseline.1);
                let z = (center - c2).normalize();
                let helper = if z.x.abs() < 0.9 {
                    Vector3::x()
                } else {
                    Vector3::y()
                };
                let x0 = z.cross(&helper).normalize();
                let roll = Rotation3::from_axis_angle(
                    &Unit::new_unchecked(z),
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                );
                let x = roll * x0;
                let y = z.cross(&x);
                let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
                if rotation_angle_deg(&r, &Matrix3::identity()) > params.max_rotation_deg {
                    continue;
                }
                (r, c2)
            }
        };
        let pose_gt = RelativePose::new(r, r * c2)?;
        let g = world_to_cam1 * Vector3::new(0.0, -1.0, 0.0);
        let gravity_gt = (GravityDirection::new(g)?, GravityDirection::new(r * g)?);

        let plane = params.planar.then(|| {
            let n = direction_in_cap(rng, &-Vector3::z(), 60.0);
            (n, n.dot(&center))
        });
        let mut scene = SyntheticScene {
            pose_gt,
            intrinsics: (k, k),
            plane,
            gravity_gt,
            points3d: Vec::with_capacity(params.n_points),
            normals: Vec::with_capacity(params.n_points),
            camera2_center: c2,
            image_size: params.image_size,
        };

        let mut tries = 0;
        while scene.points3d.len() < params.n_points && tries < 50 * params.n_points.max(1) {
            tries += 1;
            let ray = k.inverse()
                * Vector3::new(rng.random_range(0.0..=w), rng.random_range(0.0..=h), 1.0);
            let (x, n) = match plane {
                Some((n, d)) => {
                    let denom = n.dot(&ray);
                    if denom.abs() < 1e-9 {
                        continue;
                    }
                    (ray * (d / denom), n)
                }
                None => {
                    let depth = rng.random_range(
                        params.depth - params.depth_spread..=params.depth + params.depth_spread,
                    );
                    let x = ray * depth;
                    (
                        x,
                        direction_in_cap(rng, &(-x.normalize()), params.max_normal_angle_deg),
                    )
                }
            };
            if x.z <= 0.0 {
                continue;
            }
            let x2 = scene.to_camera2(&x);
            if x2.z <= 0.1 {
                continue;
            }
            let to_c1 = -x;
            let to_c2 = c2 - x;
            // Both cameras must see the same side of the tangent plane, well
            // away from grazing.
            if n.dot(&to_c1).signum() != n.dot(&to_c2).signum()
                || plane_ray_sine(&n, &to_c1) < margin
                || plane_ray_sine(&n, &to_c2) < margin
            {
                continue;
            }
            let Ok((_, p2)) = scene.project(&x) else {
                continue;
            };
            if !scene.in_image(&p2) {
                continue;
            }
            scene.points3d.push(x);
            scene.normals.push(n);
        }
        if scene.points3d.len() == params.n_points {
            return Ok(scene);
        }
    }
    Err(Error::GenerationFailure(MAX_ATTEMPTS))
}
