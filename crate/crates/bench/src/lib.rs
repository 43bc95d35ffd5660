//! Inputs shared by the benchmarks: synthetic scenes and match pools in
//! normalized coordinates, generated from fixed seeds.

use jointsac_core::estimator::{EstimatorConfig, MatchPool};
use jointsac_core::geometry::{
    normalize_affine, normalize_point, AffineCorrespondence, GravityDirection, ImagePoint,
    ModelKind,
};
use jointsac_core::synth::{
    corrupt, generate_scene, trial_rng, NoiseConfig, SceneParams, SyntheticScene,
};

pub fn scene(seed: u64, planar: bool, n_points: usize) -> SyntheticScene {
    let params = SceneParams {
        n_points,
        planar,
        ..SceneParams::default()
    };
    generate_scene(&params, &mut trial_rng(seed, 0)).expect("scene generation succeeds")
}

/// Exact affine correspondences of `scene` in normalized coordinates.
pub fn normalized_correspondences(scene: &SyntheticScene) -> Vec<AffineCorrespondence> {
    let (k1, k2) = (&scene.intrinsics.0, &scene.intrinsics.1);
    scene
        .correspondences()
        .expect("exact correspondences")
        .iter()
        .map(|ac| {
            AffineCorrespondence::new(
                normalize_point(&ac.p1, k1),
                normalize_point(&ac.p2, k2),
                normalize_affine(&ac.a, k1, k2).expect("invertible intrinsics"),
            )
            .expect("valid correspondence")
        })
        .collect()
}

/// Point pairs of the exact correspondences, for the refit solvers.
pub fn point_pairs(acs: &[AffineCorrespondence]) -> Vec<(ImagePoint, ImagePoint)> {
    acs.iter().map(|ac| (ac.p1, ac.p2)).collect()
}

/// A normalized end-to-end problem: 1 px noise, 50% outliers, three
/// candidates per source.
pub struct Problem {
    pub kind: ModelKind,
    pub pool: MatchPool,
    pub gravity: (GravityDirection, GravityDirection),
    pub config: EstimatorConfig,
    pub scene: SyntheticScene,
}

pub fn problem(kind: ModelKind, seed: u64, n_points: usize) -> Problem {
    let mut rng = trial_rng(seed, 0);
    let params = SceneParams {
        n_points,
        planar: kind == ModelKind::Homography,
        ..SceneParams::default()
    };
    let scene = generate_scene(&params, &mut rng).expect("scene generation succeeds");
    let noise = NoiseConfig {
        image_noise_px: 1.0,
        outlier_ratio: 0.5,
        pool_k: 3,
        ..NoiseConfig::default()
    };
    let data = corrupt(
        &scene,
        &scene.correspondences().expect("exact correspondences"),
        &noise,
        &mut rng,
    )
    .expect("corruption succeeds");
    let (k1, k2) = (&scene.intrinsics.0, &scene.intrinsics.1);
    let focal = 0.5 * (k1.mean_focal() + k2.mean_focal());
    Problem {
        kind,
        pool: data.pool.normalized(k1, k2),
        gravity: data.gravity,
        config: EstimatorConfig::default().scaled(focal),
        scene,
    }
}
