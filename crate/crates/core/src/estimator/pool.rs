use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::geometry::{normalize_affine, normalize_point, CameraIntrinsics, ImagePoint};

/// One candidate destination for a source feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCandidate {
    pub target_index: usize,
    pub p2: ImagePoint,
    /// Local affine transformation; `None` for point-only candidates.
    pub affine: Option<Matrix2<f64>>,
    /// Matching prior in `[0, 1]`.
    pub score: f64,
}

/// Source points with their `k` best candidate matches each.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPool {
    source_points: Vec<ImagePoint>,
    candidates: Vec<Vec<MatchCandidate>>,
    k: usize,
}

impl MatchPool {
    /// Validates that every list is nonempty, at most `k` long, sorted by
    /// score descending, and that a target index always refers to the same
    /// destination point.
    pub fn new(
        source_points: Vec<ImagePoint>,
        candidates: Vec<Vec<MatchCandidate>>,
        k: usize,
    ) -> Result<Self> {
        if source_points.is_empty() {
            return Err(Error::InvalidPool("no source points".into()));
        }
        if source_points.len() != candidates.len() {
            return Err(Error::InvalidPool(format!(
                "{} source points but {} candidate lists",
                source_points.len(),
                candidates.len()
            )));
        }
        let mut targets: Vec<Option<ImagePoint>> = Vec::new();
        for (i, list) in candidates.iter().enumerate() {
            if list.is_empty() || list.len() > k {
                return Err(Error::InvalidPool(format!(
                    "source {i} has {} candidates, expected 1..={k}",
                    list.len()
                )));
            }
            for (j, c) in list.iter().enumerate() {
                if !(0.0..=1.0).contains(&c.score) {
                    return Err(Error::InvalidPool(format!(
                        "source {i} candidate {j}: score outside [0, 1]"
                    )));
                }
                if j > 0 && c.score > list[j - 1].score {
                    return Err(Error::InvalidPool(format!(
                        "source {i}: candidates not sorted by score"
                    )));
                }
                if let Some(a) = c.affine {
                    if !a.iter().all(|x| x.is_finite()) {
                        return Err(Error::InvalidPool(format!(
                            "source {i} candidate {j}: non-finite affine"
                        )));
                    }
                }
                if targets.len() <= c.target_index {
                    targets.resize(c.target_index + 1, None);
                }
                match targets[c.target_index] {
                    Some(p) if p != c.p2 => {
                        return Err(Error::InvalidPool(format!(
                            "target {} appears with two different positions",
                            c.target_index
                        )))
                    }
                    _ => targets[c.target_index] = Some(c.p2),
                }
            }
        }
        Ok(Self {
            source_points,
            candidates,
            k,
        })
    }

    pub fn source_points(&self) -> &[ImagePoint] {
        &self.source_points
    }

    pub fn candidates(&self) -> &[Vec<MatchCandidate>] {
        &self.candidates
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.source_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_points.is_empty()
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.iter().map(Vec::len).sum()
    }

    /// Keeps at most the `k` best candidates per source.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.max(1);
        Self {
            source_points: self.source_points.clone(),
            candidates: self
                .candidates
                .iter()
                .map(|l| l[..l.len().min(k)].to_vec())
                .collect(),
            k: self.k.min(k),
        }
    }

    /// Maps pixel coordinates and affine frames to normalized camera
    /// coordinates.
    pub fn normalized(&self, k1: &CameraIntrinsics, k2: &CameraIntrinsics) -> Self {
        Self {
            source_points: self
                .source_points
                .iter()
                .map(|p| normalize_point(p, k1))
                .collect(),
            candidates: self
                .candidates
                .iter()
                .map(|list| {
                    list.iter()
                        .map(|c| MatchCandidate {
                            p2: normalize_point(&c.p2, k2),
                            affine: c.affine.and_then(|a| normalize_affine(&a, k1, k2).ok()),
                            ..*c
                        })
                        .collect()
                })
                .collect(),
            k: self.k,
        }
    }
}

/// Global sampling order: `(source, rank)` pairs sorted by score descending,
/// ties broken by source index, then target index.
pub(crate) fn sampling_order(pool: &MatchPool) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = pool
        .candidates
        .iter()
        .enumerate()
        .flat_map(|(i, list)| (0..list.len()).map(move |j| (i, j)))
        .collect();
    let c = &pool.candidates;
    order.sort_by(|&(i, j), &(a, b)| {
        c[a][b]
            .score
            .total_cmp(&c[i][j].score)
            .then(i.cmp(&a))
            .then(c[i][j].target_index.cmp(&c[a][b].target_index))
            .then(j.cmp(&b))
    });
    order
}

/// The `iteration`-th candidate in prior order, with its source index.
pub fn next_best_match(pool: &MatchPool, iteration: usize) -> Result<(usize, MatchCandidate)> {
    let order = sampling_order(pool);
    let &(i, j) = order
        .get(iteration)
        .ok_or(Error::PoolExhausted(iteration))?;
    Ok((i, pool.candidates[i][j]))
}
