use rand::seq::index::sample;
use rand::Rng;

use super::guided::{guided_matching_prepared, FinalMatch, PreparedPool};
use super::pool::MatchPool;
use super::EstimatorConfig;
use crate::geometry::{ImagePoint, ModelHypothesis, ModelKind};
use crate::solvers::{
    fit_homography_dlt, refine_pose_nonlinear, refine_pose_robust, refit_essential_8pt,
    solve_homography_4pc,
};

/// A model together with its guided-matching outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub model: ModelHypothesis,
    pub matches: Vec<FinalMatch>,
    pub score: f64,
}

pub(crate) fn match_pairs(
    pool: &MatchPool,
    matches: &[FinalMatch],
) -> Vec<(ImagePoint, ImagePoint)> {
    matches
        .iter()
        .map(|m| {
            (
                pool.source_points()[m.source_index],
                pool.candidates()[m.source_index][m.rank].p2,
            )
        })
        .collect()
}

fn refit(kind: ModelKind, pairs: &[(ImagePoint, ImagePoint)]) -> Option<ModelHypothesis> {
    match kind {
        ModelKind::Essential => refit_essential_8pt(pairs).ok(),
        ModelKind::Homography if pairs.len() == 4 => {
            solve_homography_4pc(&[pairs[0], pairs[1], pairs[2], pairs[3]]).ok()
        }
        ModelKind::Homography => fit_homography_dlt(pairs).ok(),
    }
}

/// Threshold multipliers of the inner RANSAC levels, widest first.
const LEVELS: [f64; 5] = [16.0, 8.0, 4.0, 2.0, 1.0];
/// Passes over one level while its score keeps improving.
const LEVEL_ROUNDS: usize = 4;

fn random_subset(
    pairs: &[(ImagePoint, ImagePoint)],
    m: usize,
    rng: &mut impl Rng,
) -> Vec<(ImagePoint, ImagePoint)> {
    sample(rng, pairs.len(), m)
        .iter()
        .map(|i| pairs[i])
        .collect()
}

/// Inner RANSAC on point matches at a sequence of shrinking thresholds.
///
/// At each level the current model gathers matches under the widened
/// threshold. Proposals are a robust refinement of the current model, a
/// least-squares refit with and without robust refinement, and
/// `lo_inner_iterations` minimal-sample refits. Each proposal that improves
/// the score at that level becomes the current model and is also scored at
/// `epsilon`; the best of those is returned. Hypotheses whose gravity prior
/// is off explain only the matches near their generating correspondence,
/// and the wide levels let them reach the rest. The result never scores
/// below the input, and the input is returned if nothing beats it.
pub(crate) fn local_optimization_prepared(
    mut best: ScoredModel,
    prep: &PreparedPool,
    config: &EstimatorConfig,
    rng: &mut impl Rng,
) -> ScoredModel {
    let kind = best.model.kind;
    let m = kind.refit_sample_size();
    let mut current = best.model;
    for mult in LEVELS {
        let level = config.scaled(1.0 / mult);
        let level_prep = PreparedPool::new(prep.pool, &level);
        let (mut level_matches, mut level_score) =
            guided_matching_prepared(&current, &level_prep, &level);
        for _ in 0..LEVEL_ROUNDS {
            if level_matches.len() < m {
                break;
            }
            let before = level_score;
            let pairs = match_pairs(prep.pool, &level_matches);
            let mut proposals = vec![refine_pose_robust(&current, &pairs, config.epsilon)];
            if let Some(model) = refit(kind, &pairs) {
                proposals.push(refine_pose_robust(&model, &pairs, config.epsilon));
                proposals.push(model);
            }
            proposals.extend(
                (0..config.lo_inner_iterations)
                    .filter_map(|_| refit(kind, &random_subset(&pairs, m, rng))),
            );
            for model in proposals {
                let (matches, score) = guided_matching_prepared(&model, &level_prep, &level);
                if score <= level_score {
                    continue;
                }
                current = model;
                level_matches = matches;
                level_score = score;
                let (matches, score) = guided_matching_prepared(&model, prep, config);
                if score > best.score && matches.len() >= m {
                    best = ScoredModel {
                        model,
                        matches,
                        score,
                    };
                }
            }
            if level_score <= before {
                break;
            }
        }
    }

    let refined = refine_pose_nonlinear(&best.model, &match_pairs(prep.pool, &best.matches));
    if refined != best.model {
        let (matches, score) = guided_matching_prepared(&refined, prep, config);
        if score >= best.score && matches.len() >= m {
            best = ScoredModel {
                model: refined,
                matches,
                score,
            };
        }
    }
    best
}

/// Local optimization of `model` on `pool`; see [`super::estimate`] for
/// units. Returns the input (rescored) when it has too few matches.
pub fn local_optimization(
    model: &ModelHypothesis,
    pool: &MatchPool,
    config: &EstimatorConfig,
    rng: &mut impl Rng,
) -> ScoredModel {
    let prep = PreparedPool::new(pool, config);
    let (matches, score) = guided_matching_prepared(model, &prep, config);
    local_optimization_prepared(
        ScoredModel {
            model: *model,
            matches,
            score,
        },
        &prep,
        config,
        rng,
    )
}
