//! Plain-text file formats. Every real number is written with 17 significant
//! digits so that reading a file back reproduces the values bit for bit.

use std::collections::HashMap;

use jointsac_core::estimator::{MatchCandidate, MatchPool};
use jointsac_core::{CameraIntrinsics, GravityDirection, ImagePoint, ModelKind};
use nalgebra::{Matrix2, Matrix3, Vector3};

/// A parse failure, located by 1-based line number when it concerns a line.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ParseError {
    pub line: Option<usize>,
    pub message: String,
}

impl ParseError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn whole(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

/// Decimal text of `x` with 17 significant digits; `nan`, `inf` and `-inf`
/// for the non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(fmt_f64)
        .collect::<Vec<_>>()
        .join(" ")
}

fn number(token: &str, line: usize) -> Result<f64, ParseError> {
    token
        .parse::<f64>()
        .map_err(|_| ParseError::at(line, format!("`{token}` is not a number")))
}

fn finite(token: &str, line: usize) -> Result<f64, ParseError> {
    let x = number(token, line)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(ParseError::at(line, format!("`{token}` is not finite")))
    }
}

fn integer(token: &str, line: usize) -> Result<usize, ParseError> {
    token
        .parse::<usize>()
        .map_err(|_| ParseError::at(line, format!("`{token}` is not a nonnegative integer")))
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// One line of a match file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub src_idx: usize,
    pub p1: ImagePoint,
    pub p2: ImagePoint,
    /// `None` for point-only candidates, written as four `nan`.
    pub affine: Option<Matrix2<f64>>,
    pub score: f64,
}

/// Parses `src_idx u1 v1 u2 v2 a11 a12 a21 a22 score` records.
///
/// Records must be grouped by ascending, contiguous `src_idx`, sorted by
/// descending score within a group, and agree on the source position.
pub fn parse_matches(text: &str) -> Result<Vec<MatchRecord>, ParseError> {
    let mut records: Vec<MatchRecord> = Vec::new();
    for (line, content) in content_lines(text) {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 10 {
            return Err(ParseError::at(
                line,
                format!("expected 10 fields, found {}", tokens.len()),
            ));
        }
        let src_idx = integer(tokens[0], line)?;
        let p = |i: usize| -> Result<ImagePoint, ParseError> {
            ImagePoint::new(finite(tokens[i], line)?, finite(tokens[i + 1], line)?)
                .map_err(|e| ParseError::at(line, e.to_string()))
        };
        let (p1, p2) = (p(1)?, p(3)?);
        let a: Vec<f64> = tokens[5..9]
            .iter()
            .map(|t| number(t, line))
            .collect::<Result<_, _>>()?;
        let affine = if a.iter().all(|x| x.is_nan()) {
            None
        } else if a.iter().all(|x| x.is_finite()) {
            Some(Matrix2::new(a[0], a[1], a[2], a[3]))
        } else {
            return Err(ParseError::at(
                line,
                "affine entries must be all finite or all nan",
            ));
        };
        let score = finite(tokens[9], line)?;
        if !(0.0..=1.0).contains(&score) {
            return Err(ParseError::at(
                line,
                format!("score {score} outside [0, 1]"),
            ));
        }

        match records.last() {
            None if src_idx != 0 => {
                return Err(ParseError::at(line, "first record must have src_idx 0"))
            }
            Some(prev) if src_idx == prev.src_idx => {
                if score > prev.score {
                    return Err(ParseError::at(
                        line,
                        "records of a source must be sorted by descending score",
                    ));
                }
                if p1 != prev.p1 {
                    return Err(ParseError::at(
                        line,
                        "source position differs from the previous record",
                    ));
                }
            }
            Some(prev) if src_idx != prev.src_idx + 1 => {
                return Err(ParseError::at(
                    line,
                    format!("src_idx {src_idx} follows {}", prev.src_idx),
                ));
            }
            _ => {}
        }
        records.push(MatchRecord {
            src_idx,
            p1,
            p2,
            affine,
            score,
        });
    }
    if records.is_empty() {
        return Err(ParseError::whole("no match records"));
    }
    Ok(records)
}

pub fn write_matches(records: &[MatchRecord]) -> String {
    let mut out = String::from("# src_idx u1 v1 u2 v2 a11 a12 a21 a22 score\n");
    for r in records {
        let a = r.affine.map_or([f64::NAN; 4], |a| {
            [a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]]
        });
        out += &format!(
            "{} {} {} {}\n",
            r.src_idx,
            join([r.p1.u, r.p1.v, r.p2.u, r.p2.v]),
            join(a),
            fmt_f64(r.score)
        );
    }
    out
}

/// Builds the pool. Candidates at the same destination point share a target
/// index, numbered in order of first appearance.
pub fn records_to_pool(records: &[MatchRecord]) -> Result<MatchPool, ParseError> {
    let mut targets: HashMap<(u64, u64), usize> = HashMap::new();
    let mut sources = Vec::new();
    let mut lists: Vec<Vec<MatchCandidate>> = Vec::new();
    for r in records {
        if r.src_idx == sources.len() {
            sources.push(r.p1);
            lists.push(Vec::new());
        }
        let next = targets.len();
        let target_index = *targets
            .entry((r.p2.u.to_bits(), r.p2.v.to_bits()))
            .or_insert(next);
        lists[r.src_idx].push(MatchCandidate {
            target_index,
            p2: r.p2,
            affine: r.affine,
            score: r.score,
        });
    }
    let k = lists.iter().map(Vec::len).max().unwrap_or(1);
    MatchPool::new(sources, lists, k).map_err(|e| ParseError::whole(e.to_string()))
}

pub fn pool_to_records(pool: &MatchPool) -> Vec<MatchRecord> {
    pool.source_points()
        .iter()
        .zip(pool.candidates())
        .enumerate()
        .flat_map(|(src_idx, (p1, list))| {
            list.iter().map(move |c| MatchRecord {
                src_idx,
                p1: *p1,
                p2: c.p2,
                affine: c.affine,
                score: c.score,
            })
        })
        .collect()
}

/// Intrinsics of both cameras and the gravity direction seen by each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationFile {
    pub k1: Matrix3<f64>,
    pub k2: Matrix3<f64>,
    /// `[0, -1, 0]` for both views when the file has no gravity lines.
    pub gravity: (Vector3<f64>, Vector3<f64>),
}

impl CalibrationFile {
    pub fn intrinsics(&self) -> (CameraIntrinsics, CameraIntrinsics) {
        (
            CameraIntrinsics::new(self.k1).expect("validated on parse"),
            CameraIntrinsics::new(self.k2).expect("validated on parse"),
        )
    }

    pub fn gravity(&self) -> (GravityDirection, GravityDirection) {
        (
            GravityDirection::new(self.gravity.0).expect("validated on parse"),
            GravityDirection::new(self.gravity.1).expect("validated on parse"),
        )
    }
}

pub fn parse_calibration(text: &str) -> Result<CalibrationFile, ParseError> {
    let lines: Vec<(usize, Vec<f64>)> = content_lines(text)
        .map(|(line, l)| {
            Ok((
                line,
                l.split_whitespace()
                    .map(|t| finite(t, line))
                    .collect::<Result<Vec<_>, _>>()?,
            ))
        })
        .collect::<Result<_, ParseError>>()?;
    if lines.len() != 2 && lines.len() != 4 {
        return Err(ParseError::whole(format!(
            "expected two intrinsics lines and optionally two gravity lines, found {} lines",
            lines.len()
        )));
    }
    let matrix = |(line, v): &(usize, Vec<f64>)| -> Result<Matrix3<f64>, ParseError> {
        if v.len() != 9 {
            return Err(ParseError::at(
                *line,
                format!("expected 9 numbers, found {}", v.len()),
            ));
        }
        let k = Matrix3::from_row_slice(v);
        CameraIntrinsics::new(k).map_err(|e| ParseError::at(*line, e.to_string()))?;
        Ok(k)
    };
    let vector = |(line, v): &(usize, Vec<f64>)| -> Result<Vector3<f64>, ParseError> {
        if v.len() != 3 {
            return Err(ParseError::at(
                *line,
                format!("expected 3 numbers, found {}", v.len()),
            ));
        }
        let g = Vector3::new(v[0], v[1], v[2]);
        GravityDirection::new(g).map_err(|e| ParseError::at(*line, e.to_string()))?;
        Ok(g)
    };
    let down = Vector3::new(0.0, -1.0, 0.0);
    let gravity = if lines.len() == 4 {
        (vector(&lines[2])?, vector(&lines[3])?)
    } else {
        (down, down)
    };
    Ok(CalibrationFile {
        k1: matrix(&lines[0])?,
        k2: matrix(&lines[1])?,
        gravity,
    })
}

pub fn write_calibration(c: &CalibrationFile) -> String {
    let rows = |m: &Matrix3<f64>| join(m.transpose().iter().copied());
    format!(
        "# K1, K2 row-major, then gravity in each view\n{}\n{}\n{}\n{}\n",
        rows(&c.k1),
        rows(&c.k2),
        join(c.gravity.0.iter().copied()),
        join(c.gravity.1.iter().copied())
    )
}

/// A finalized match as stored in a result file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InlierLine {
    pub src_idx: usize,
    /// Position of the chosen candidate in the source's list.
    pub tgt_rank: usize,
    /// In normalized camera units.
    pub residual: f64,
}

/// Output of an estimation run. Matrices are in normalized camera
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub kind: ModelKind,
    pub model: Matrix3<f64>,
    /// Absent when no pose could be extracted from the model.
    pub rotation: Option<Matrix3<f64>>,
    pub translation: Option<Vector3<f64>>,
    /// Homographies only: `n'` of `H = R - t n'^T`.
    pub normal: Option<Vector3<f64>>,
    pub score: f64,
    pub inliers: Vec<InlierLine>,
    pub iterations: usize,
    pub lo_runs: usize,
    pub runtime_s: f64,
}

pub fn write_result(r: &ResultFile) -> String {
    let rows = |m: &Matrix3<f64>| join(m.transpose().iter().copied());
    let mut out = format!("model {}\nmatrix {}\n", r.kind.name(), rows(&r.model));
    if let Some(rot) = &r.rotation {
        out += &format!("rotation {}\n", rows(rot));
    }
    if let Some(t) = &r.translation {
        out += &format!("translation {}\n", join(t.iter().copied()));
    }
    if let Some(n) = &r.normal {
        out += &format!("normal {}\n", join(n.iter().copied()));
    }
    out += &format!("score {}\ninliers {}\n", fmt_f64(r.score), r.inliers.len());
    for m in &r.inliers {
        out += &format!("{} {} {}\n", m.src_idx, m.tgt_rank, fmt_f64(m.residual));
    }
    out += &format!(
        "iterations {}\nlo_runs {}\nruntime_s {}\n",
        r.iterations,
        r.lo_runs,
        fmt_f64(r.runtime_s)
    );
    out
}

/// Cursor over the keyed lines of a result file.
struct Keyed<'a> {
    lines: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Keyed<'a> {
    fn peek_key(&mut self) -> Option<&'a str> {
        self.lines
            .peek()
            .and_then(|(_, l)| l.split_whitespace().next())
    }

    fn take(&mut self, key: &str) -> Result<(usize, Vec<&'a str>), ParseError> {
        let (line, content) = self
            .lines
            .next()
            .ok_or_else(|| ParseError::whole(format!("missing `{key}` line")))?;
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some(k) if k == key => Ok((line, tokens.collect())),
            Some(k) => Err(ParseError::at(
                line,
                format!("expected `{key}`, found `{k}`"),
            )),
            None => Err(ParseError::at(line, format!("expected `{key}`"))),
        }
    }

    fn numbers(&mut self, key: &str, n: usize) -> Result<Vec<f64>, ParseError> {
        let (line, tokens) = self.take(key)?;
        if tokens.len() != n {
            return Err(ParseError::at(
                line,
                format!("`{key}` needs {n} numbers, found {}", tokens.len()),
            ));
        }
        tokens.iter().map(|t| number(t, line)).collect()
    }

    fn count(&mut self, key: &str) -> Result<usize, ParseError> {
        let (line, tokens) = self.take(key)?;
        match tokens.as_slice() {
            [t] => integer(t, line),
            _ => Err(ParseError::at(line, format!("`{key}` needs one integer"))),
        }
    }
}

pub fn parse_result(text: &str) -> Result<ResultFile, ParseError> {
    let mut k = Keyed {
        lines: (Box::new(content_lines(text)) as Box<dyn Iterator<Item = _>>).peekable(),
    };
    let (line, kind) = k.take("model")?;
    let kind = match kind.as_slice() {
        ["essential"] => ModelKind::Essential,
        ["homography"] => ModelKind::Homography,
        _ => {
            return Err(ParseError::at(
                line,
                "model must be `essential` or `homography`",
            ))
        }
    };
    let model = Matrix3::from_row_slice(&k.numbers("matrix", 9)?);
    let rotation = match k.peek_key() {
        Some("rotation") => Some(Matrix3::from_row_slice(&k.numbers("rotation", 9)?)),
        _ => None,
    };
    let translation = match k.peek_key() {
        Some("translation") => Some(Vector3::from_row_slice(&k.numbers("translation", 3)?)),
        _ => None,
    };
    let normal = match k.peek_key() {
        Some("normal") => Some(Vector3::from_row_slice(&k.numbers("normal", 3)?)),
        _ => None,
    };
    let score = k.numbers("score", 1)?[0];
    let n = k.count("inliers")?;
    let mut inliers = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, content) = k
            .lines
            .next()
            .ok_or_else(|| ParseError::whole("inlier list is truncated"))?;
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(ParseError::at(
                line,
                "inlier lines are `src_idx tgt_rank residual`",
            ));
        }
        inliers.push(InlierLine {
            src_idx: integer(tokens[0], line)?,
            tgt_rank: integer(tokens[1], line)?,
            residual: number(tokens[2], line)?,
        });
    }
    let iterations = k.count("iterations")?;
    let lo_runs = k.count("lo_runs")?;
    let runtime_s = k.numbers("runtime_s", 1)?[0];
    if let Some((line, _)) = k.lines.next() {
        return Err(ParseError::at(
            line,
            "unexpected content after the stats block",
        ));
    }
    Ok(ResultFile {
        kind,
        model,
        rotation,
        translation,
        normal,
        score,
        inliers,
        iterations,
        lo_runs,
        runtime_s,
    })
}

/// Parses a comma-separated list of reals such as `0,0.5,1`.
pub fn parse_float_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{}` is not a number", t.trim()))
        })
        .collect()
}
