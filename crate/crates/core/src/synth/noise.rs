use nalgebra::{Matrix2, Rotation3, Unit};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scene::{uniform_direction, SyntheticScene};
use crate::error::{Error, Result};
use crate::estimator::{MatchCandidate, MatchPool};
use crate::geometry::{AffineCorrespondence, GravityDirection, ImagePoint};

/// Corruption applied to exact correspondences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Standard deviation of the Gaussian added to every point coordinate.
    pub image_noise_px: f64,
    /// Angle by which each gravity vector is tilted about a random
    /// horizontal axis.
    pub gravity_noise_deg: f64,
    /// Standard deviation, in pixels per unit tangent vector, of the noise
    /// added to every affine entry.
    pub affine_noise_px: f64,
    /// Fraction of source points whose candidates are all wrong.
    pub outlier_ratio: f64,
    pub pool_k: usize,
    /// Probability that the true match is the top-ranked candidate.
    pub top_rank_probability: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            image_noise_px: 0.0,
            gravity_noise_deg: 0.0,
            affine_noise_px: 0.0,
            outlier_ratio: 0.0,
            pool_k: 1,
            top_rank_probability: 0.6,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.image_noise_px >= 0.0
            && self.gravity_noise_deg >= 0.0
            && self.affine_noise_px >= 0.0
            && (0.0..1.0).contains(&self.outlier_ratio)
            && self.pool_k >= 1
            && (0.0..=1.0).contains(&self.top_rank_probability);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "noise magnitudes must be nonnegative, outlier ratio in [0, 1)".into(),
            ))
        }
    }
}

/// A synthetic match pool in pixel coordinates with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedPool {
    pub pool: MatchPool,
    /// `labels[i][j]`: candidate `j` of source `i` is the true match.
    pub labels: Vec<Vec<bool>>,
    /// Gravity directions as a sensor would report them.
    pub gravity: (GravityDirection, GravityDirection),
    /// Sources that carry no true candidate.
    pub outlier_sources: Vec<bool>,
}

/// Tilts `v` by `deg` degrees about a random axis perpendicular to it.
pub fn perturb_gravity(v: &GravityDirection, deg: f64, rng: &mut impl Rng) -> GravityDirection {
    let v = *v.vector();
    let axis = loop {
        let a = v.cross(&uniform_direction(rng));
        if a.norm() > 1e-6 {
            break Unit::new_normalize(a);
        }
    };
    GravityDirection::new(Rotation3::from_axis_angle(&axis, deg.to_radians()) * v)
        .expect("rotated unit vector")
}

fn random_point(scene: &SyntheticScene, rng: &mut impl Rng) -> ImagePoint {
    ImagePoint {
        u: rng.random_range(0.0..=scene.image_size.0),
        v: rng.random_range(0.0..=scene.image_size.1),
    }
}

fn random_affine(rng: &mut impl Rng) -> Matrix2<f64> {
    let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let (s, c) = a.sin_cos();
    Matrix2::new(c, -s, s, c)
        * Matrix2::new(
            rng.random_range(0.5..2.0),
            0.0,
            0.0,
            rng.random_range(0.5..2.0),
        )
}

/// Adds noise to exact pixel correspondences and wraps them into a `k`-wide
/// pool with decoy candidates.
///
/// Source `i` has true target `i`; decoys get fresh target indices. Scores
/// are `max(0, 1 - 0.15 rank) + N(0, 0.05)` clipped to `[0, 1]`, after which
/// each list is re-sorted by score.
pub fn corrupt(
    scene: &SyntheticScene,
    acs: &[AffineCorrespondence],
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<CorruptedPool> {
    noise.validate()?;
    if acs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = acs.len();
    let k = noise.pool_k;
    let pixel = Normal::new(0.0, noise.image_noise_px).expect("finite std");
    let affine_std = noise.affine_noise_px / scene.intrinsics.0.mean_focal();
    let affine = Normal::new(0.0, affine_std).expect("finite std");
    let score_noise = Normal::new(0.0, 0.05).expect("finite std");

    let gravity = (
        perturb_gravity(&scene.gravity_gt.0, noise.gravity_noise_deg, rng),
        perturb_gravity(&scene.gravity_gt.1, noise.gravity_noise_deg, rng),
    );

    let n_out = (n as f64 * noise.outlier_ratio).floor() as usize;
    let mut outlier_sources = vec![false; n];
    for i in sample(rng, n, n_out).iter() {
        outlier_sources[i] = true;
    }

    let mut next_target = n;
    let mut sources = Vec::with_capacity(n);
    let mut lists = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, ac) in acs.iter().enumerate() {
        let p1 = ImagePoint::new(ac.p1.u + pixel.sample(rng), ac.p1.v + pixel.sample(rng))?;
        let p2 = ImagePoint::new(ac.p2.u + pixel.sample(rng), ac.p2.v + pixel.sample(rng))?;
        let a = ac.a + Matrix2::from_fn(|_, _| affine.sample(rng));
        sources.push(p1);

        let true_rank = if outlier_sources[i] {
            None
        } else if k == 1 || rng.random_bool(noise.top_rank_probability) {
            Some(0)
        } else {
            Some(rng.random_range(1..k))
        };
        let mut list: Vec<(MatchCandidate, bool)> = (0..k)
            .map(|rank| {
                let base = (1.0 - 0.15 * rank as f64).max(0.0);
                let score = (base + score_noise.sample(rng)).clamp(0.0, 1.0);
                if true_rank == Some(rank) {
                    (
                        MatchCandidate {
                            target_index: i,
                            p2,
                            affine: Some(a),
                            score,
                        },
                        true,
                    )
                } else {
                    let decoy = loop {
                        let q = random_point(scene, rng);
                        if q.distance(&ac.p2) > 1e-6 {
                            break q;
                        }
                    };
                    next_target += 1;
                    let c = MatchCandidate {
                        target_index: next_target - 1,
                        p2: decoy,
                        affine: Some(random_affine(rng)),
                        score,
                    };
                    (c, false)
                }
            })
            .collect();
        list.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));
        labels.push(list.iter().map(|c| c.1).collect());
        lists.push(list.into_iter().map(|c| c.0).collect());
    }
    Ok(CorruptedPool {
        pool: MatchPool::new(sources, lists, k)?,
        labels,
        gravity,
        outlier_sources,
    })
}
