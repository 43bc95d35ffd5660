mod common;

use common::{normalized_acs, pose, scene, CASES};
use jointsac_core::geometry::{
    compose_essential, homography_transfer_error, normalize_point, sampson_distance,
};
use jointsac_core::metrics::{auc, pose_error, TranslationSign};
use jointsac_core::synth::{corrupt, generate_scene, trial_rng, NoiseConfig, SceneParams};
use proptest::prelude::*;

fn errors() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(
        prop_oneof![9 => 0.0..50.0f64, 1 => Just(f64::INFINITY)],
        1..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn generation_is_a_function_of_the_seed(seed in any::<u64>(), planar in any::<bool>(), outliers in 0.0..0.9f64) {
        let params = SceneParams { n_points: 10, planar, ..SceneParams::default() };
        let a = generate_scene(&params, &mut trial_rng(seed, 0)).unwrap();
        let b = generate_scene(&params, &mut trial_rng(seed, 0)).unwrap();
        prop_assert_eq!(&a, &b);
        let noise = NoiseConfig { image_noise_px: 1.0, gravity_noise_deg: 1.0, affine_noise_px: 0.5, outlier_ratio: outliers, pool_k: 3, ..NoiseConfig::default() };
        let acs = a.correspondences().unwrap();
        let x = corrupt(&a, &acs, &noise, &mut trial_rng(seed, 1)).unwrap();
        let y = corrupt(&b, &acs, &noise, &mut trial_rng(seed, 1)).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn generated_correspondences_fit_the_ground_truth(seed in any::<u64>(), planar in any::<bool>()) {
        let s = scene(seed, 5, planar);
        let e = compose_essential(&s.pose_gt);
        let h = s.plane.map(|(n, d)| s.normalized_homography(&(n * d), &n).unwrap());
        for ac in normalized_acs(&s) {
            let algebraic = ac.p2.homogeneous().dot(&(e * ac.p1.homogeneous()));
            prop_assert!(algebraic.abs() < 1e-9);
            let affine = jointsac_core::geometry::affine_epipolar_residual(&ac, &e).unwrap().norm();
            prop_assert!(affine < 1e-9);
            if let Some(h) = h {
                prop_assert!(homography_transfer_error(&ac.p1, &ac.p2, &h).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_true_candidates_have_zero_residual(seed in any::<u64>(), k in 1..5usize) {
        let s = scene(seed, 10, false);
        let noise = NoiseConfig { outlier_ratio: 0.3, pool_k: k, ..NoiseConfig::default() };
        let data = corrupt(&s, &s.correspondences().unwrap(), &noise, &mut trial_rng(seed, 1)).unwrap();
        let e = compose_essential(&s.pose_gt);
        let (k1, k2) = (&s.intrinsics.0, &s.intrinsics.1);
        for (i, labels) in data.labels.iter().enumerate() {
            for (j, &truth) in labels.iter().enumerate() {
                if truth {
                    let p1 = normalize_point(&data.pool.source_points()[i], k1);
                    let p2 = normalize_point(&data.pool.candidates()[i][j].p2, k2);
                    prop_assert!(sampson_distance(&p1, &p2, &e).unwrap() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn outlier_labels_are_exact(seed in any::<u64>(), k in 1..5usize, outliers in 0.0..0.9f64, noise_px in 0.0..2.0f64) {
        let s = scene(seed, 10, false);
        let acs = s.correspondences().unwrap();
        let noise = NoiseConfig { image_noise_px: noise_px, outlier_ratio: outliers, pool_k: k, ..NoiseConfig::default() };
        let data = corrupt(&s, &acs, &noise, &mut trial_rng(seed, 1)).unwrap();
        for (i, labels) in data.labels.iter().enumerate() {
            prop_assert_eq!(labels.iter().filter(|&&b| b).count(), usize::from(!data.outlier_sources[i]));
            let truth = labels.iter().position(|&b| b).map(|j| data.pool.candidates()[i][j].p2);
            for (j, &label) in labels.iter().enumerate() {
                let p2 = data.pool.candidates()[i][j].p2;
                if !label {
                    prop_assert!(p2.distance(&acs[i].p2) > 1e-6);
                    if let Some(t) = truth {
                        prop_assert!(p2.distance(&t) > 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn auc_is_scale_consistent(errs in errors(), tau in 0.1..50.0f64, c in 0.01..100.0f64) {
        let scaled: Vec<f64> = errs.iter().map(|e| c * e).collect();
        let (a, b) = (auc(&errs, tau).unwrap(), auc(&scaled, c * tau).unwrap());
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn auc_never_increases_with_larger_errors(
        pairs in proptest::collection::vec((0.0..50.0f64, 0.0..10.0f64), 1..40),
        tau in 0.1..50.0f64,
    ) {
        let base: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let worse: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        prop_assert!(auc(&worse, tau).unwrap() <= auc(&base, tau).unwrap() + 1e-15);
    }

    #[test]
    fn auc_is_monotone_in_the_threshold(errs in errors(), t1 in 0.1..50.0f64, dt in 0.0..50.0f64) {
        prop_assert!(auc(&errs, t1).unwrap() <= auc(&errs, t1 + dt).unwrap() + 1e-15);
    }

    #[test]
    fn rotation_error_is_symmetric(a in pose(), b in pose()) {
        let ab = pose_error(&a, &b, TranslationSign::Unsigned);
        let ba = pose_error(&b, &a, TranslationSign::Unsigned);
        prop_assert!((ab.rotation_deg - ba.rotation_deg).abs() < 1e-12);
        prop_assert!((ab.translation_deg - ba.translation_deg).abs() < 1e-12);
    }
}
