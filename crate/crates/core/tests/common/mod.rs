#![allow(dead_code)]

use jointsac_core::geometry::{normalize_affine, normalize_point};
use jointsac_core::synth::{generate_scene, trial_rng, SceneParams, SyntheticScene};
use jointsac_core::{AffineCorrespondence, RelativePose};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

pub const CASES: u32 = 1000;

pub fn scene(seed: u64, n_points: usize, planar: bool) -> SyntheticScene {
    let params = SceneParams {
        n_points,
        planar,
        ..SceneParams::default()
    };
    generate_scene(&params, &mut trial_rng(seed, 0)).expect("scene generation")
}

/// Exact correspondences of `scene` in normalized camera coordinates.
pub fn normalized_acs(scene: &SyntheticScene) -> Vec<AffineCorrespondence> {
    let (k1, k2) = (&scene.intrinsics.0, &scene.intrinsics.1);
    scene
        .correspondences()
        .expect("exact correspondences")
        .iter()
        .map(|ac| {
            let a = normalize_affine(&ac.a, k1, k2).expect("regular affine");
            AffineCorrespondence::new(normalize_point(&ac.p1, k1), normalize_point(&ac.p2, k2), a)
                .expect("valid AC")
        })
        .collect()
}

pub fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Rotations up to about 100 degrees with translations bounded away from zero.
pub fn pose() -> impl Strategy<Value = RelativePose> {
    (
        vec3(1.0),
        vec3(1.0).prop_filter("nonzero translation", |t| t.norm() > 0.1),
    )
        .prop_map(|(w, t)| {
            RelativePose::new(Rotation3::new(w).into_inner(), t).expect("valid pose")
        })
}
