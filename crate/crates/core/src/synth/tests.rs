use approx::assert_relative_eq;
use nalgebra::{Matrix2, Matrix3, Vector3};

use super::*;
use crate::geometry::{
    affine_epipolar_residual, compose_essential, normalize_affine, normalize_point,
    AffineCorrespondence, ImagePoint, RelativePose,
};

fn scene(planar: bool, seed: u64) -> SyntheticScene {
    generate_scene(
        &SceneParams {
            planar,
            n_points: 50,
            ..SceneParams::default()
        },
        &mut trial_rng(seed, 0),
    )
    .unwrap()
}

#[test]
fn scenes_are_deterministic() {
    for planar in [false, true] {
        assert_eq!(scene(planar, 11), scene(planar, 11));
        assert_ne!(scene(planar, 11), scene(planar, 12));
    }
}

#[test]
fn points_in_front_of_both_cameras() {
    for t in 0..1000u64 {
        let planar = t % 2 == 0;
        let params = SceneParams {
            planar,
            n_points: 20,
            ..SceneParams::default()
        };
        let s = generate_scene(&params, &mut trial_rng(5, t)).unwrap();
        let g = s.pose_gt.r * s.gravity_gt.0.vector() - s.gravity_gt.1.vector();
        assert!(g.norm() < 1e-12);
        assert!(
            crate::metrics::rotation_angle_deg(&s.pose_gt.r, &Matrix3::identity()) <= 60.0 + 1e-9
        );
        for x in &s.points3d {
            assert!(x.z > 0.0 && s.to_camera2(x).z > 0.0);
        }
        if let Some((n, d)) = s.plane {
            for x in &s.points3d {
                assert!((n.dot(x) - d).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn supplied_pose_is_kept() {
    let pose = RelativePose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
    let params = SceneParams {
        pose: Some(pose),
        n_points: 10,
        ..SceneParams::default()
    };
    let s = generate_scene(&params, &mut trial_rng(1, 0)).unwrap();
    assert_eq!(s.pose_gt.r, Matrix3::identity());
    assert_eq!(s.pose_gt.t, Vector3::new(1.0, 0.0, 0.0));
}

/// Pixel transfer of `p` through the tangent plane of `x`.
fn transfer(s: &SyntheticScene, x: &Vector3<f64>, n: &Vector3<f64>, p: (f64, f64)) -> (f64, f64) {
    let y = s.pixel_homography(x, n).unwrap() * Vector3::new(p.0, p.1, 1.0);
    (y.x / y.z, y.y / y.z)
}

#[test]
fn affine_matches_finite_differences() {
    let mut checked = 0;
    for t in 0..100u64 {
        let s = scene(t % 2 == 1, 100 + t);
        for (x, n) in s.points3d.iter().zip(&s.normals).take(10) {
            let a = exact_affine(&s, x, n).unwrap();
            let (p1, _) = s.project(x).unwrap();
            let h = 1e-3;
            let mut fd = Matrix2::zeros();
            for c in 0..2 {
                let d = if c == 0 { (h, 0.0) } else { (0.0, h) };
                let plus = transfer(&s, x, n, (p1.u + d.0, p1.v + d.1));
                let minus = transfer(&s, x, n, (p1.u - d.0, p1.v - d.1));
                fd[(0, c)] = (plus.0 - minus.0) / (2.0 * h);
                fd[(1, c)] = (plus.1 - minus.1) / (2.0 * h);
            }
            assert!((a - fd).norm() <= 1e-7 * a.norm(), "{a} vs {fd}");
            checked += 1;
        }
    }
    assert_eq!(checked, 1000);
}

#[test]
fn fronto_parallel_translation_gives_identity() {
    let pose = RelativePose::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
    let params = SceneParams {
        pose: Some(pose),
        planar: true,
        n_points: 1,
        ..SceneParams::default()
    };
    let mut s = generate_scene(&params, &mut trial_rng(2, 0)).unwrap();
    s.camera2_center = Vector3::new(0.5, 0.0, 0.0);
    let x = Vector3::new(0.3, -0.2, 4.0);
    let a = exact_affine(&s, &x, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
    assert_relative_eq!(a, Matrix2::identity(), epsilon = 1e-12);

    let tilted = Vector3::new(45f64.to_radians().sin(), 0.0, -45f64.to_radians().cos());
    let b = exact_affine(&s, &x, &tilted).unwrap();
    assert!((b - Matrix2::identity()).norm() > 1e-3);
}

#[test]
fn grazing_plane_is_rejected() {
    let s = scene(false, 3);
    let x = s.points3d[0];
    let n = x.cross(&Vector3::y()).normalize();
    assert_eq!(exact_affine(&s, &x, &n), Err(crate::Error::GrazingPlane));
}

#[test]
fn exact_correspondences_satisfy_the_model() {
    for t in 0..20u64 {
        let s = scene(false, 200 + t);
        let (k1, k2) = (&s.intrinsics.0, &s.intrinsics.1);
        let e = compose_essential(&s.pose_gt);
        for ac in s.correspondences().unwrap() {
            let nac = AffineCorrespondence::new(
                normalize_point(&ac.p1, k1),
                normalize_point(&ac.p2, k2),
                normalize_affine(&ac.a, k1, k2).unwrap(),
            )
            .unwrap();
            assert!(nac.p2.homogeneous().dot(&(e * nac.p1.homogeneous())).abs() < 1e-9);
            assert!(affine_epipolar_residual(&nac, &e).unwrap().norm() < 1e-9);
        }

        let s = scene(true, 300 + t);
        let (n, _) = s.plane.unwrap();
        let h = s.pixel_homography(&s.points3d[0], &n).unwrap();
        for (x, ac) in s.points3d.iter().zip(s.correspondences().unwrap()) {
            let y = h * ac.p1.homogeneous();
            assert!(ImagePoint::from_homogeneous(&y).unwrap().distance(&ac.p2) < 1e-9);
            assert!((exact_affine(&s, x, &n).unwrap() - ac.a).norm() < 1e-9);
        }
    }
}

#[test]
fn noiseless_single_candidate_pool_is_exact() {
    let s = scene(false, 7);
    let acs = s.correspondences().unwrap();
    let data = corrupt(&s, &acs, &NoiseConfig::default(), &mut trial_rng(7, 1)).unwrap();
    assert_eq!(data.gravity, s.gravity_gt);
    for (i, ac) in acs.iter().enumerate() {
        assert_eq!(data.pool.source_points()[i], ac.p1);
        let c = &data.pool.candidates()[i];
        assert_eq!(c.len(), 1);
        assert_eq!(
            (c[0].p2, c[0].affine, c[0].target_index),
            (ac.p2, Some(ac.a), i)
        );
        assert_eq!(data.labels[i], vec![true]);
    }
}

#[test]
fn outlier_count_and_labels_are_exact() {
    let s = scene(true, 8);
    let acs = s.correspondences().unwrap();
    let noise = NoiseConfig {
        outlier_ratio: 0.5,
        pool_k: 4,
        image_noise_px: 1.0,
        ..NoiseConfig::default()
    };
    let data = corrupt(&s, &acs, &noise, &mut trial_rng(8, 1)).unwrap();
    assert_eq!(data.outlier_sources.iter().filter(|&&o| o).count(), 25);
    for (i, ac) in acs.iter().enumerate() {
        let trues = data.labels[i].iter().filter(|&&b| b).count();
        assert_eq!(trues, usize::from(!data.outlier_sources[i]));
        for (c, &label) in data.pool.candidates()[i].iter().zip(&data.labels[i]) {
            assert_eq!(label, c.target_index == i);
            if !label {
                assert!(c.p2.distance(&ac.p2) > 1e-6);
            }
        }
    }
}

#[test]
fn true_rank_distribution() {
    let s = scene(false, 9);
    let acs = s.correspondences().unwrap();
    let noise = NoiseConfig {
        pool_k: 3,
        ..NoiseConfig::default()
    };
    let mut top = 0;
    let mut total = 0;
    for t in 0..200u64 {
        let data = corrupt(&s, &acs, &noise, &mut trial_rng(9, t)).unwrap();
        for l in &data.labels {
            total += 1;
            top += usize::from(l[0]);
        }
    }
    // Re-sorting by noisy score moves the true match a little, so allow slack
    // around the nominal 0.6.
    let frac = top as f64 / total as f64;
    assert!((0.55..0.72).contains(&frac), "{frac}");
}

#[test]
fn pixel_noise_has_the_requested_scale() {
    let noise = NoiseConfig {
        image_noise_px: 1.0,
        ..NoiseConfig::default()
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0.0;
    for t in 0..100u64 {
        let s = generate_scene(
            &SceneParams {
                n_points: 100,
                ..SceneParams::default()
            },
            &mut trial_rng(10, t),
        )
        .unwrap();
        let acs = s.correspondences().unwrap();
        let data = corrupt(&s, &acs, &noise, &mut trial_rng(11, t)).unwrap();
        for (i, ac) in acs.iter().enumerate() {
            let d = data.pool.candidates()[i][0].p2.distance(&ac.p2);
            sum += d;
            sum_sq += d * d;
            count += 1.0;
        }
    }
    let rms = (sum_sq / count).sqrt();
    let mean = sum / count;
    let r2 = 2f64.sqrt();
    assert!((0.8 * r2..=1.2 * r2).contains(&rms), "{rms}");
    assert!((0.8 * r2..=1.2 * r2).contains(&mean), "{mean}");
}

#[test]
fn gravity_tilt_is_exact() {
    let mut rng = trial_rng(12, 0);
    let v = crate::GravityDirection::down();
    for deg in [0.0, 0.1, 5.0, 10.0] {
        let w = perturb_gravity(&v, deg, &mut rng);
        assert!((crate::metrics::vector_angle_deg(v.vector(), w.vector()) - deg).abs() < 1e-9);
    }
}

#[test]
fn stability_study_is_accurate_and_reproducible() {
    for solver in [
        StudySolver::Pose1acg,
        StudySolver::Homography1acg,
        StudySolver::FourPoint,
    ] {
        let a = run_stability_study(solver, 200, 4).unwrap();
        assert_eq!(a, run_stability_study(solver, 200, 4).unwrap());
        let counted: usize = a.histogram.iter().map(|b| b.count_rot).sum();
        assert_eq!(counted, a.trials - a.failures);
        let good = a
            .log10_errors()
            .filter(|&(r, t)| r < -4.0 && t < -4.0)
            .count();
        assert!(good as f64 >= 0.97 * a.trials as f64, "{solver:?}: {good}");
    }
    assert!(run_stability_study(StudySolver::Pose1acg, 0, 1).is_err());
}

#[test]
fn zero_noise_level_matches_stability_study() {
    let fixed = NoiseStudyConfig {
        gravity_noise_deg: 0.0,
        affine_noise_px: 0.0,
    };
    let errs = noise_study_errors(StudySolver::Pose1acg, &[0.0], 100, 21, &fixed).unwrap();
    let stab = run_stability_study(StudySolver::Pose1acg, 100, 21).unwrap();
    assert_eq!(errs[0], stab.errors);
}

#[test]
fn noise_study_rows() {
    let rows = run_noise_study(
        StudySolver::Homography1acg,
        &[0.0, 1.0],
        50,
        3,
        &NoiseStudyConfig::default(),
    )
    .unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].mean_rot_deg > 0.0 && rows[0].stderr_rot >= 0.0);
    assert!(run_noise_study(
        StudySolver::Homography1acg,
        &[1.0, 0.5],
        5,
        3,
        &NoiseStudyConfig::default()
    )
    .is_err());
}

#[test]
fn end_to_end_is_deterministic_across_scheduling() {
    for kind in [crate::ModelKind::Homography, crate::ModelKind::Essential] {
        let mut cfg = EndToEndConfig::new(kind, 6, 17);
        let par = run_end_to_end(&cfg).unwrap();
        cfg.parallel = false;
        let seq = run_end_to_end(&cfg).unwrap();
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(
                (a.error, a.inliers, a.iterations, a.score.to_bits()),
                (b.error, b.inliers, b.iterations, b.score.to_bits())
            );
            assert!(a.lo_monotone && a.score_reproducible);
            assert!(a.pose_error_deg() < 5.0, "{kind:?}: {:?}", a.error);
        }
    }
}
