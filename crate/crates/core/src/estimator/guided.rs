use nalgebra::{Matrix3, Vector2};
use statrs::function::gamma::{gamma, gamma_lr, gamma_ur};

use super::pool::{MatchCandidate, MatchPool};
use super::{EstimatorConfig, Scoring};
use crate::geometry::{
    homography_transfer_error_with_inverse, sampson_distance, ImagePoint, ModelHypothesis,
    ModelKind,
};

/// Quantile of the chi distribution used as the noise cutoff, `k * sigma_max`.
pub const MAGSAC_CUTOFF: f64 = 3.64;
/// Shape `(nu - 1) / 2` for `nu = 4` degrees of freedom.
const MAGSAC_SHAPE: f64 = 1.5;

/// A finalized one-to-one match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalMatch {
    pub source_index: usize,
    pub target_index: usize,
    /// Position of the chosen candidate in the source's list.
    pub rank: usize,
    pub residual: f64,
}

fn magsac_loss(r: f64, sigma_max: f64) -> f64 {
    let k2 = MAGSAC_CUTOFF * MAGSAC_CUTOFF / 2.0;
    let y = (r * r / (2.0 * sigma_max * sigma_max)).min(k2);
    if y <= 0.0 {
        return 0.0;
    }
    let lower = gamma_lr(MAGSAC_SHAPE + 1.0, y) * gamma(MAGSAC_SHAPE + 1.0);
    let upper = |x: f64| gamma_ur(MAGSAC_SHAPE, x) * gamma(MAGSAC_SHAPE);
    let r2 = 2.0 * sigma_max * sigma_max * y;
    sigma_max * sigma_max / 2.0 * lower + r2 / 4.0 * (upper(y) - upper(k2))
}

/// Quality contribution of a residual: 1 at zero, nonincreasing, and zero at
/// the inlier threshold (truncated quadratic) or at `3.64 sigma_max`
/// (marginalized loss).
pub fn score_gain(residual: f64, config: &EstimatorConfig) -> f64 {
    if !(residual >= 0.0) {
        return 0.0;
    }
    match config.scoring {
        Scoring::TruncatedQuadratic => {
            if residual >= config.epsilon {
                0.0
            } else {
                1.0 - (residual * residual) / (config.epsilon * config.epsilon)
            }
        }
        Scoring::MagsacLike => {
            let sigma = config.sigma_max();
            if residual >= MAGSAC_CUTOFF * sigma {
                return 0.0;
            }
            let full = magsac_loss(MAGSAC_CUTOFF * sigma, sigma);
            (1.0 - magsac_loss(residual, sigma) / full).clamp(0.0, 1.0)
        }
    }
}

/// Residual of a point pair under a model; infinite when undefined.
/// `h_inv` must be the inverse of a homography model.
pub(crate) fn residual(
    model: &ModelHypothesis,
    h_inv: Option<&Matrix3<f64>>,
    p1: &ImagePoint,
    p2: &ImagePoint,
) -> f64 {
    let r = match (model.kind, h_inv) {
        (ModelKind::Essential, _) => sampson_distance(p1, p2, &model.matrix),
        (ModelKind::Homography, Some(inv)) => {
            homography_transfer_error_with_inverse(p1, p2, &model.matrix, inv)
        }
        (ModelKind::Homography, None) => return f64::INFINITY,
    };
    r.unwrap_or(f64::INFINITY)
}

pub(crate) fn model_inverse(model: &ModelHypothesis) -> Option<Matrix3<f64>> {
    match model.kind {
        ModelKind::Homography => model.matrix.try_inverse(),
        ModelKind::Essential => None,
    }
}

/// Uniform grid over the destination points. A candidate is hashed to the
/// cell containing its point; queries select the cells that can hold a
/// point within the inlier threshold of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct GridIndex {
    origin: Vector2<f64>,
    cell: f64,
    nx: i64,
    ny: i64,
    /// Largest `||(u, v, 1)||` over the grid extent.
    max_homogeneous_norm: f64,
}

impl GridIndex {
    /// Grid over the bounding box of `points` with cells of at least
    /// `min_cell`, and at most 64 cells along the longer side.
    pub fn new<'a>(
        points: impl IntoIterator<Item = &'a ImagePoint>,
        min_cell: f64,
    ) -> Option<Self> {
        let mut lo = Vector2::repeat(f64::INFINITY);
        let mut hi = Vector2::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(&p.coords());
            hi = hi.sup(&p.coords());
        }
        if !lo.x.is_finite() {
            return None;
        }
        let extent = (hi - lo).max();
        let cell = min_cell.max(extent / 64.0).max(1e-12);
        let nx = ((hi.x - lo.x) / cell).floor() as i64 + 1;
        let ny = ((hi.y - lo.y) / cell).floor() as i64 + 1;
        let max_homogeneous_norm = [lo.x.abs().max(hi.x.abs()), lo.y.abs().max(hi.y.abs())]
            .iter()
            .fold(1.0, |acc: f64, c| acc + c * c)
            .sqrt();
        Some(Self {
            origin: lo,
            cell,
            nx,
            ny,
            max_homogeneous_norm,
        })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.nx as usize, self.ny as usize)
    }

    /// Cell coordinates of a point (possibly outside the grid).
    pub fn cell_of(&self, p: &ImagePoint) -> (i64, i64) {
        (
            ((p.u - self.origin.x) / self.cell).floor() as i64,
            ((p.v - self.origin.y) / self.cell).floor() as i64,
        )
    }

    fn contains(&self, (ix, iy): (i64, i64)) -> bool {
        (0..self.nx).contains(&ix) && (0..self.ny).contains(&iy)
    }

    fn cell_center(&self, (ix, iy): (i64, i64)) -> Vector2<f64> {
        self.origin + Vector2::new(ix as f64 + 0.5, iy as f64 + 0.5) * self.cell
    }
}

/// Slack on hashing radii so rounding at the threshold never drops a match.
const RADIUS_SLACK: f64 = 1.0 + 1e-9;

/// Ranks of the candidates that may lie within `epsilon` (symmetric transfer
/// error) of `H p1`: those in cells overlapping the disk of radius
/// `sqrt(2) epsilon` around the projection.
pub fn hash_candidates_homography(
    h: &Matrix3<f64>,
    p1: &ImagePoint,
    candidates: &[MatchCandidate],
    grid: &GridIndex,
    epsilon: f64,
) -> Vec<usize> {
    let mut out = Vec::new();
    extend_homography(&mut out, h, p1, candidates, grid, epsilon);
    out
}

fn extend_homography(
    out: &mut Vec<usize>,
    h: &Matrix3<f64>,
    p1: &ImagePoint,
    candidates: &[MatchCandidate],
    grid: &GridIndex,
    epsilon: f64,
) {
    let Ok(center) = ImagePoint::from_homogeneous(&(h * p1.homogeneous())) else {
        return;
    };
    let r = std::f64::consts::SQRT_2 * epsilon * RADIUS_SLACK;
    let lo = grid.cell_of(&ImagePoint {
        u: center.u - r,
        v: center.v - r,
    });
    let hi = grid.cell_of(&ImagePoint {
        u: center.u + r,
        v: center.v + r,
    });
    if lo.0 >= grid.nx || lo.1 >= grid.ny || hi.0 < 0 || hi.1 < 0 {
        return;
    }
    out.extend(
        candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| {
                let (ix, iy) = grid.cell_of(&c.p2);
                (lo.0..=hi.0).contains(&ix) && (lo.1..=hi.1).contains(&iy)
            })
            .map(|(j, _)| j),
    );
}

/// Ranks of the candidates that may have Sampson distance below `epsilon`:
/// those in cells meeting the band around the epipolar line `E p1`.
///
/// The Sampson bound `|x2^T E x1| < epsilon sqrt(|n1|^2 + |n2|^2)` gives a
/// point-to-line distance below `epsilon sqrt(1 + (n1max / |n2|)^2)`, where
/// `n1max` bounds `|n1|` over the grid. When the line is undefined (`p1` at
/// the epipole) every candidate is returned.
pub fn hash_candidates_epipolar(
    e: &Matrix3<f64>,
    p1: &ImagePoint,
    candidates: &[MatchCandidate],
    grid: &GridIndex,
    epsilon: f64,
) -> Vec<usize> {
    let mut out = Vec::new();
    EpipolarBand::new(e, grid).extend(&mut out, p1, candidates, epsilon);
    out
}

/// The model-dependent part of the epipolar band query.
struct EpipolarBand<'a> {
    e: &'a Matrix3<f64>,
    grid: &'a GridIndex,
    /// Upper bound on `|n1|` over the grid.
    n1max: f64,
}

impl<'a> EpipolarBand<'a> {
    fn new(e: &'a Matrix3<f64>, grid: &'a GridIndex) -> Self {
        let e_cols = e.fixed_columns::<2>(0).into_owned();
        let sigma = e_cols.singular_values().max();
        Self {
            e,
            grid,
            n1max: sigma * grid.max_homogeneous_norm,
        }
    }

    fn extend(
        &self,
        out: &mut Vec<usize>,
        p1: &ImagePoint,
        candidates: &[MatchCandidate],
        epsilon: f64,
    ) {
        let grid = self.grid;
        let line = self.e * p1.homogeneous();
        let n2 = line.x.hypot(line.y);
        if n2 <= 1e-12 * self.e.norm() {
            out.extend(0..candidates.len());
            return;
        }
        let half_width = epsilon * (1.0 + (self.n1max / n2).powi(2)).sqrt() * RADIUS_SLACK;
        let reach = half_width + grid.cell * std::f64::consts::FRAC_1_SQRT_2;
        out.extend(
            candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| {
                    let cell = grid.cell_of(&c.p2);
                    if !grid.contains(cell) {
                        return false;
                    }
                    let m = grid.cell_center(cell);
                    (line.x * m.x + line.y * m.y + line.z).abs() / n2 <= reach
                })
                .map(|(j, _)| j),
        );
    }
}

/// Model-independent state for repeated guided matching on one pool.
#[derive(Debug, Clone)]
pub(crate) struct PreparedPool<'a> {
    pub pool: &'a MatchPool,
    /// `|K'(p1)|`: candidates passing the ratio filter are a prefix.
    pub ratio_len: Vec<usize>,
    pub grid: Option<GridIndex>,
    pub target_slots: usize,
}

impl<'a> PreparedPool<'a> {
    pub fn new(pool: &'a MatchPool, config: &EstimatorConfig) -> Self {
        let ratio_len = pool
            .candidates()
            .iter()
            .map(|list| {
                let cut = config.mu * list[0].score;
                list.iter().take_while(|c| c.score >= cut).count().max(1)
            })
            .collect();
        let grid = if config.hashing {
            let cell = std::f64::consts::SQRT_2 * config.epsilon;
            GridIndex::new(pool.candidates().iter().flatten().map(|c| &c.p2), cell)
        } else {
            None
        };
        let target_slots = pool
            .candidates()
            .iter()
            .flatten()
            .map(|c| c.target_index + 1)
            .max()
            .unwrap_or(0);
        Self {
            pool,
            ratio_len,
            grid,
            target_slots,
        }
    }
}

/// Guided matching on a prepared pool. Each source selects its
/// lowest-residual acceptable candidate among `K'`; when two sources claim
/// the same target the lower residual keeps it (ties to the lower source
/// index) and the other falls back to its next choice.
pub(crate) fn guided_matching_prepared(
    model: &ModelHypothesis,
    prep: &PreparedPool,
    config: &EstimatorConfig,
) -> (Vec<FinalMatch>, f64) {
    let pool = prep.pool;
    let h_inv = model_inverse(model);
    if model.kind == ModelKind::Homography && h_inv.is_none() {
        return (Vec::new(), 0.0);
    }
    let eps = config.epsilon;

    let band = match (&prep.grid, model.kind) {
        (Some(g), ModelKind::Essential) => Some(EpipolarBand::new(&model.matrix, g)),
        _ => None,
    };
    let mut prefs: Vec<Vec<(f64, usize)>> = Vec::with_capacity(pool.len());
    let mut subset = Vec::new();
    for (i, p1) in pool.source_points().iter().enumerate() {
        let list = &pool.candidates()[i][..prep.ratio_len[i]];
        subset.clear();
        match (&prep.grid, &band) {
            (_, Some(band)) => band.extend(&mut subset, p1, list, eps),
            (Some(g), None) => extend_homography(&mut subset, &model.matrix, p1, list, g, eps),
            (None, None) => subset.extend(0..list.len()),
        }
        let mut acceptable: Vec<(f64, usize)> = subset
            .iter()
            .filter_map(|&j| {
                let r = residual(model, h_inv.as_ref(), p1, &list[j].p2);
                (r < eps && score_gain(r, config) > 0.0).then_some((r, j))
            })
            .collect();
        acceptable.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        prefs.push(acceptable);
    }

    // Deferred acceptance over targets.
    let mut owner: Vec<Option<(f64, usize)>> = vec![None; prep.target_slots];
    let mut next = vec![0usize; pool.len()];
    let mut stack: Vec<usize> = (0..pool.len())
        .rev()
        .filter(|&i| !prefs[i].is_empty())
        .collect();
    while let Some(s) = stack.pop() {
        while next[s] < prefs[s].len() {
            let (r, j) = prefs[s][next[s]];
            let t = pool.candidates()[s][j].target_index;
            match owner[t] {
                None => {
                    owner[t] = Some((r, s));
                    break;
                }
                Some((ro, so)) => {
                    if r.total_cmp(&ro).then(s.cmp(&so)).is_lt() {
                        owner[t] = Some((r, s));
                        next[so] += 1;
                        stack.push(so);
                        break;
                    }
                    next[s] += 1;
                }
            }
        }
    }

    let mut matches: Vec<FinalMatch> = Vec::new();
    for (s, pref) in prefs.iter().enumerate() {
        if let Some(&(r, j)) = pref.get(next[s]) {
            let t = pool.candidates()[s][j].target_index;
            if owner[t] == Some((r, s)) {
                matches.push(FinalMatch {
                    source_index: s,
                    target_index: t,
                    rank: j,
                    residual: r,
                });
            }
        }
    }
    let score = matches
        .iter()
        .map(|m| score_gain(m.residual, config) / prep.ratio_len[m.source_index] as f64)
        // Not `sum()`: an empty f64 sum is -0.0.
        .fold(0.0, |acc, g| acc + g);
    (matches, score)
}

/// Finalizes one-to-one matches for `model` and returns them with the
/// weighted score. Coordinates and `config.epsilon` must share units.
pub fn guided_matching(
    model: &ModelHypothesis,
    pool: &MatchPool,
    config: &EstimatorConfig,
) -> (Vec<FinalMatch>, f64) {
    guided_matching_prepared(model, &PreparedPool::new(pool, config), config)
}
