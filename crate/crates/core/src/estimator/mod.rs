//! Joint matching and estimation.
//!
//! Candidates from the one-to-many pool are visited in order of their
//! matching prior. Each one, taken as an affine correspondence, yields model
//! hypotheses through the single-correspondence solvers; guided matching
//! then picks at most one candidate per source feature and scores the model.
//! New best models are polished by local optimization.

mod guided;
mod lo;
mod pool;

pub use guided::{
    guided_matching, hash_candidates_epipolar, hash_candidates_homography, score_gain, FinalMatch,
    GridIndex, MAGSAC_CUTOFF,
};
pub use lo::{local_optimization, ScoredModel};
pub use pool::{next_best_match, MatchCandidate, MatchPool};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    decompose_essential_with_points, triangulate_depths, AffineCorrespondence, CameraIntrinsics,
    GravityDirection, ModelHypothesis, ModelKind,
};
use crate::solvers::{solve_homography_1ac_gravity, solve_pose_1ac_gravity};
use guided::{guided_matching_prepared, model_inverse, residual, PreparedPool};
use lo::{local_optimization_prepared, match_pairs};
use pool::sampling_order;

/// Quality function turning residuals into score contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scoring {
    /// `1 - r^2 / epsilon^2` below the threshold.
    #[default]
    TruncatedQuadratic,
    /// Loss marginalized over noise scales up to `sigma_max`.
    MagsacLike,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Inlier threshold. Pixels for [`estimate`]; the units of the pool for
    /// the lower-level functions.
    pub epsilon: f64,
    /// Ratio filter: only candidates scoring at least `mu` times the best
    /// candidate of their source take part in guided matching.
    pub mu: f64,
    /// Pool width; longer candidate lists are truncated.
    pub k: usize,
    pub max_iterations: usize,
    pub confidence: f64,
    pub lo_inner_iterations: usize,
    pub seed: u64,
    pub scoring: Scoring,
    /// Noise-scale ceiling for [`Scoring::MagsacLike`]; defaults to
    /// `epsilon / 3.64`, so that its cutoff equals the threshold.
    pub sigma_max: Option<f64>,
    /// Restrict residual evaluations through a grid over the destination
    /// points. Results are identical either way.
    pub hashing: bool,
    /// Record the best score after every iteration.
    pub trace: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            epsilon: 2.0,
            mu: 0.7,
            k: 5,
            max_iterations: 1000,
            confidence: 0.999,
            lo_inner_iterations: 20,
            seed: 0,
            scoring: Scoring::TruncatedQuadratic,
            sigma_max: None,
            hashing: true,
            trace: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("threshold must be positive");
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return bad("mu must lie in [0, 1]");
        }
        if self.k == 0 {
            return bad("k must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        if self.lo_inner_iterations == 0 {
            return bad("lo_inner_iterations must be positive");
        }
        if let Some(s) = self.sigma_max {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sigma_max must be positive");
            }
        }
        Ok(())
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max.unwrap_or(self.epsilon / MAGSAC_CUTOFF)
    }

    /// The same configuration with distances divided by `scale`.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            epsilon: self.epsilon / scale,
            sigma_max: self.sigma_max.map(|s| s / scale),
            ..*self
        }
    }

    /// Number of local optimizations allowed during sampling.
    pub fn lo_budget(&self) -> usize {
        (self.max_iterations as f64).log2().ceil().max(1.0) as usize
    }
}

/// Best-score snapshot after an iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    /// In normalized camera coordinates.
    pub model: ModelHypothesis,
    /// Sorted by source index; residuals in normalized units.
    pub matches: Vec<FinalMatch>,
    pub score: f64,
    pub iterations_run: usize,
    pub lo_runs: usize,
    pub trace: Option<Vec<TraceEntry>>,
    /// The inlier threshold in normalized units.
    pub epsilon: f64,
}

/// Number of single-sample iterations after which an all-inlier draw has
/// occurred with probability `confidence`, given inlier ratio `w`.
fn required_iterations(confidence: f64, w: f64) -> f64 {
    if w >= 1.0 {
        0.0
    } else if w <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 - confidence).ln() / (1.0 - w).ln()
    }
}

const MIN_ITERATIONS: usize = 20;

/// Hypotheses of one sampled candidate that fit their own correspondence.
fn hypotheses(
    kind: ModelKind,
    ac: &AffineCorrespondence,
    gravity: (&GravityDirection, &GravityDirection),
    epsilon: f64,
) -> Vec<ModelHypothesis> {
    let models: Vec<ModelHypothesis> = match kind {
        ModelKind::Essential => match solve_pose_1ac_gravity(ac, gravity.0, gravity.1) {
            Ok(out) => out
                .poses
                .iter()
                .filter(|c| matches!(triangulate_depths(&c.pose, &ac.p1, &ac.p2), Some((z1, z2)) if z1 > 0.0 && z2 > 0.0))
                .map(|c| ModelHypothesis::essential_from_pose(c.pose))
                .collect(),
            Err(_) => Vec::new(),
        },
        ModelKind::Homography => match solve_homography_1ac_gravity(ac, gravity.0, gravity.1) {
            Ok(out) => out.homographies,
            Err(_) => Vec::new(),
        },
    };
    models
        .into_iter()
        .filter(|m| residual(m, model_inverse(m).as_ref(), &ac.p1, &ac.p2) < epsilon)
        .collect()
}

/// Runs the joint matching and estimation loop on a pixel-coordinate pool.
///
/// The pool, affine frames and threshold are normalized with the two
/// intrinsics; the returned model and residuals are in normalized
/// coordinates. Fails with [`Error::NoModelFound`] unless some model gathers
/// enough matches for a point-based refit.
pub fn estimate(
    pool: &MatchPool,
    kind: ModelKind,
    intrinsics: (&CameraIntrinsics, &CameraIntrinsics),
    gravity: (&GravityDirection, &GravityDirection),
    config: &EstimatorConfig,
) -> Result<EstimationResult> {
    config.validate()?;
    let focal = 0.5 * (intrinsics.0.mean_focal() + intrinsics.1.mean_focal());
    let config = config.scaled(focal);
    let pool = pool.normalized(intrinsics.0, intrinsics.1);
    estimate_normalized(&pool, kind, gravity, &config)
}

/// [`estimate`] on a pool that is already in normalized coordinates, with a
/// threshold in the same units.
pub fn estimate_normalized(
    pool: &MatchPool,
    kind: ModelKind,
    gravity: (&GravityDirection, &GravityDirection),
    config: &EstimatorConfig,
) -> Result<EstimationResult> {
    config.validate()?;
    let pool = &pool.truncated(config.k);
    let prep = PreparedPool::new(pool, config);
    let order = sampling_order(pool);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lo_budget = config.lo_budget();
    let refit_size = kind.refit_sample_size();

    let mut best: Option<ScoredModel> = None;
    let mut best_hypothesis_score = f64::NEG_INFINITY;
    let mut lo_runs = 0;
    let mut trace = config.trace.then(Vec::new);
    let mut t = 0;
    while t < config.max_iterations && t < order.len() {
        let best_count = best.as_ref().map_or(0, |b| b.matches.len());
        let needed = required_iterations(config.confidence, best_count as f64 / pool.len() as f64);
        if t >= MIN_ITERATIONS && t as f64 >= needed {
            break;
        }
        let (src, rank) = order[t];
        t += 1;

        let cand = &pool.candidates()[src][rank];
        let sampled = cand
            .affine
            .and_then(|a| AffineCorrespondence::new(pool.source_points()[src], cand.p2, a).ok());
        let mut iteration_best: Option<ScoredModel> = None;
        if let Some(ac) = sampled {
            for model in hypotheses(kind, &ac, gravity, config.epsilon) {
                let (matches, score) = guided_matching_prepared(&model, &prep, config);
                if iteration_best.as_ref().is_none_or(|b| score > b.score) {
                    iteration_best = Some(ScoredModel {
                        model,
                        matches,
                        score,
                    });
                }
            }
        }
        if let Some(cand) = iteration_best {
            if cand.score > best_hypothesis_score {
                best_hypothesis_score = cand.score;
                let cand = if lo_runs < lo_budget {
                    lo_runs += 1;
                    local_optimization_prepared(cand, &prep, config, &mut rng)
                } else {
                    cand
                };
                if best.as_ref().is_none_or(|b| cand.score > b.score) {
                    best = Some(cand);
                }
            }
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(TraceEntry {
                iteration: t - 1,
                best_score: best.as_ref().map_or(0.0, |b| b.score),
            });
        }
    }

    let Some(mut best) = best else {
        return Err(Error::NoModelFound);
    };
    lo_runs += 1;
    best = local_optimization_prepared(best, &prep, config, &mut rng);
    if best.matches.len() < refit_size {
        return Err(Error::NoModelFound);
    }
    if kind == ModelKind::Essential && best.model.pose.is_none() {
        if let Ok(pose) =
            decompose_essential_with_points(&best.model.matrix, &match_pairs(pool, &best.matches))
        {
            best.model = best.model.with_pose(pose);
        }
    }
    Ok(EstimationResult {
        model: best.model,
        matches: best.matches,
        score: best.score,
        iterations_run: t,
        lo_runs,
        trace,
        epsilon: config.epsilon,
    })
}
