//! The `jointsac` command line: estimation on match-pool files, synthetic
//! benchmarks and error-table evaluation.
//!
//! Exit codes: 0 on success, 1 for invalid flags or malformed input, 2 when
//! estimation finds no model.

pub mod format;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jointsac_core::estimator::{estimate, guided_matching, EstimatorConfig, MatchPool, Scoring};
use jointsac_core::geometry::{decompose_essential_with_points, decompose_homography_with_gravity};
use jointsac_core::metrics::{aggregate, TrialOutcome};
use jointsac_core::synth::{
    run_end_to_end, run_noise_study, run_stability_study, EndToEndConfig, NoiseStudyConfig,
    StudySolver,
};
use jointsac_core::{Error, ImagePoint, ModelHypothesis, ModelKind};

use format::{
    fmt_f64, parse_calibration, parse_float_list, parse_matches, records_to_pool, write_result,
    CalibrationFile, InlierLine, ParseError, ResultFile,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Parse { path: String, source: ParseError },
    #[error("{0}")]
    Io(String),
    #[error("no model found: {0}")]
    NoModel(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::NoModel(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "jointsac",
    version,
    about = "Joint matching and robust two-view estimation from one-to-many match pools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate an essential matrix or homography from a match-pool file.
    Estimate(EstimateArgs),
    /// Run a synthetic study and write its table as CSV.
    Bench(BenchArgs),
    /// Summarize a table of per-pair pose errors.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Essential,
    Homography,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoringArg {
    /// Truncated quadratic.
    Msac,
    /// Marginalized over noise scales.
    Magsac,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Match-pool file: `src_idx u1 v1 u2 v2 a11 a12 a21 a22 score` per line.
    #[arg(long)]
    pub matches: PathBuf,
    /// Calibration file: K and K' row-major, optionally one gravity vector per view.
    #[arg(long)]
    pub calib: PathBuf,
    /// Inlier threshold in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,
    /// Candidates kept per source.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Ratio filter on candidate scores.
    #[arg(long, default_value_t = 0.7)]
    pub mu: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0.999)]
    pub confidence: f64,
    #[arg(long, value_enum, default_value_t = ScoringArg::Msac)]
    pub scoring: ScoringArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Result file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluate every candidate instead of querying the destination grid.
    #[arg(long)]
    pub no_hashing: bool,
    /// Print the best score after every iteration to standard error.
    #[arg(long)]
    pub trace: bool,
    /// Report a runtime of 0 so that output is byte-stable.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyArg {
    Stability,
    Noise,
    E2e,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    #[value(name = "1acg-pose")]
    Pose1acg,
    #[value(name = "1acg-h")]
    Homography1acg,
    #[value(name = "4pc")]
    FourPoint,
}

impl From<SolverArg> for StudySolver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Pose1acg => StudySolver::Pose1acg,
            SolverArg::Homography1acg => StudySolver::Homography1acg,
            SolverArg::FourPoint => StudySolver::FourPoint,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub study: StudyArg,
    /// Solver under study; for `e2e`, `1acg-pose` runs essential and
    /// `1acg-h` homography estimation.
    #[arg(long, value_enum, default_value_t = SolverArg::Pose1acg)]
    pub solver: SolverArg,
    #[arg(long, default_value_t = 10000)]
    pub trials: usize,
    /// Image noise levels in pixels for the noise study.
    #[arg(long = "noise-levels", default_value = "0,0.5,1,2")]
    pub noise_levels: String,
    /// Outlier ratio of the end-to-end pools.
    #[arg(long, default_value_t = 0.5)]
    pub outliers: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report runtimes of 0 so that output is byte-stable.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// CSV of per-pair errors in degrees. A row with several cells (say
    /// rotation and translation) counts as their maximum; `inf` marks a failure.
    #[arg(long)]
    pub errors: PathBuf,
    #[arg(long, default_value = "1,2.5,5,10,20")]
    pub thresholds: String,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn parsed<T>(path: &Path, r: Result<T, ParseError>) -> Result<T, CliError> {
    r.map_err(|source| CliError::Parse {
        path: path.display().to_string(),
        source,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

impl EstimateArgs {
    pub fn kind(&self) -> ModelKind {
        match self.model {
            ModelArg::Essential => ModelKind::Essential,
            ModelArg::Homography => ModelKind::Homography,
        }
    }

    pub fn config(&self) -> Result<EstimatorConfig, CliError> {
        let config = EstimatorConfig {
            epsilon: self.threshold,
            mu: self.mu,
            k: self.k,
            max_iterations: self.max_iters,
            confidence: self.confidence,
            seed: self.seed,
            scoring: match self.scoring {
                ScoringArg::Msac => Scoring::TruncatedQuadratic,
                ScoringArg::Magsac => Scoring::MagsacLike,
            },
            hashing: !self.no_hashing,
            trace: self.trace,
            ..EstimatorConfig::default()
        };
        config
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid flags: {e}")))?;
        Ok(config)
    }
}

/// Loads the match pool and calibration named by `args`.
pub fn load_inputs(args: &EstimateArgs) -> Result<(MatchPool, CalibrationFile), CliError> {
    let records = parsed(&args.matches, parse_matches(&read(&args.matches)?))?;
    let pool = parsed(&args.matches, records_to_pool(&records))?;
    let calib = parsed(&args.calib, parse_calibration(&read(&args.calib)?))?;
    Ok((pool, calib))
}

/// Runs the estimator and assembles the result file.
pub fn run_estimate(args: &EstimateArgs) -> Result<ResultFile, CliError> {
    let config = args.config()?;
    let (pool, calib) = load_inputs(args)?;
    let (k1, k2) = calib.intrinsics();
    let (g1, g2) = calib.gravity();
    let kind = args.kind();

    let start = Instant::now();
    let result = match estimate(&pool, kind, (&k1, &k2), (&g1, &g2), &config) {
        Ok(r) => r,
        Err(Error::NoModelFound) => {
            return Err(CliError::NoModel(
                "no hypothesis gathered enough matches for a refit".into(),
            ))
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let runtime_s = if args.no_timing {
        0.0
    } else {
        start.elapsed().as_secs_f64()
    };

    if let Some(trace) = &result.trace {
        for t in trace {
            eprintln!("trace {} {}", t.iteration, fmt_f64(t.best_score));
        }
    }

    let normalized = pool.normalized(&k1, &k2).truncated(config.k);
    let pairs: Vec<(ImagePoint, ImagePoint)> = result
        .matches
        .iter()
        .map(|m| {
            (
                normalized.source_points()[m.source_index],
                normalized.candidates()[m.source_index][m.rank].p2,
            )
        })
        .collect();
    let (rotation, translation, normal) = match kind {
        ModelKind::Essential => {
            let pose = result
                .model
                .pose
                .or_else(|| decompose_essential_with_points(&result.model.matrix, &pairs).ok());
            (pose.map(|p| p.r), pose.map(|p| p.t), None)
        }
        ModelKind::Homography => {
            match decompose_homography_with_gravity(&result.model.matrix, &pairs, (&g1, &g2)) {
                Ok(d) => (Some(d.pose.r), Some(d.pose.t), Some(d.plane_normal)),
                Err(_) => (None, None, None),
            }
        }
    };

    Ok(ResultFile {
        kind,
        model: result.model.matrix,
        rotation,
        translation,
        normal,
        score: result.score,
        inliers: result
            .matches
            .iter()
            .map(|m| InlierLine {
                src_idx: m.source_index,
                tgt_rank: m.rank,
                residual: m.residual,
            })
            .collect(),
        iterations: result.iterations_run,
        lo_runs: result.lo_runs,
        runtime_s,
    })
}

/// Guided matching of the stored model against the inputs of `args`; equals
/// the stored score bit for bit for files written by [`run_estimate`].
pub fn rescore(result: &ResultFile, args: &EstimateArgs) -> Result<f64, CliError> {
    let config = args.config()?;
    let (pool, calib) = load_inputs(args)?;
    let (k1, k2) = calib.intrinsics();
    let focal = 0.5 * (k1.mean_focal() + k2.mean_focal());
    let model = ModelHypothesis {
        kind: result.kind,
        matrix: result.model,
        pose: None,
        plane_normal: None,
    };
    let pool = pool.normalized(&k1, &k2).truncated(config.k);
    Ok(guided_matching(&model, &pool, &config.scaled(focal)).1)
}

const SUMMARY_THRESHOLDS: [f64; 5] = [1.0, 2.5, 5.0, 10.0, 20.0];

/// CSV table of the requested study.
pub fn run_bench(args: &BenchArgs) -> Result<String, CliError> {
    let usage = |e: Error| CliError::Usage(format!("invalid flags: {e}"));
    if args.trials == 0 {
        return Err(CliError::Usage(
            "invalid flags: --trials must be positive".into(),
        ));
    }
    let mut out = String::new();
    match args.study {
        StudyArg::Stability => {
            let report =
                run_stability_study(args.solver.into(), args.trials, args.seed).map_err(usage)?;
            out += "bin_lo,bin_hi,count_rot,count_trans,failures\n";
            for b in &report.histogram {
                out += &format!(
                    "{},{},{},{},{}\n",
                    fmt_f64(b.lo),
                    fmt_f64(b.hi),
                    b.count_rot,
                    b.count_trans,
                    report.failures
                );
            }
        }
        StudyArg::Noise => {
            let levels = parse_float_list(&args.noise_levels)
                .map_err(|e| CliError::Usage(format!("--noise-levels: {e}")))?;
            let rows = run_noise_study(
                args.solver.into(),
                &levels,
                args.trials,
                args.seed,
                &NoiseStudyConfig::default(),
            )
            .map_err(usage)?;
            out += "noise_px,mean_rot_deg,mean_trans_deg,stderr_rot,stderr_trans\n";
            for r in rows {
                out += &format!(
                    "{},{},{},{},{}\n",
                    fmt_f64(r.noise_px),
                    fmt_f64(r.mean_rot_deg),
                    fmt_f64(r.mean_trans_deg),
                    fmt_f64(r.stderr_rot),
                    fmt_f64(r.stderr_trans)
                );
            }
        }
        StudyArg::E2e => {
            let kind = match args.solver {
                SolverArg::Pose1acg => ModelKind::Essential,
                SolverArg::Homography1acg => ModelKind::Homography,
                SolverArg::FourPoint => {
                    return Err(CliError::Usage(
                        "invalid flags: the e2e study runs 1acg-pose or 1acg-h".into(),
                    ))
                }
            };
            let mut cfg = EndToEndConfig::new(kind, args.trials, args.seed);
            cfg.noise.outlier_ratio = args.outliers;
            let trials = run_end_to_end(&cfg).map_err(usage)?;
            out += "trial,rot_deg,trans_deg,inliers,iters,runtime_s\n";
            let mut outcomes = Vec::with_capacity(trials.len());
            for (i, t) in trials.iter().enumerate() {
                let runtime_s = if args.no_timing { 0.0 } else { t.runtime_s };
                let (rot, trans) = t.error.map_or((f64::INFINITY, f64::INFINITY), |e| {
                    (e.rotation_deg, e.translation_deg)
                });
                out += &format!(
                    "{i},{},{},{},{},{}\n",
                    fmt_f64(rot),
                    fmt_f64(trans),
                    t.inliers,
                    t.iterations,
                    fmt_f64(runtime_s)
                );
                outcomes.push(TrialOutcome {
                    error_deg: Some(rot.max(trans)),
                    inliers: t.inliers,
                    runtime_s,
                });
            }
            out += "# summary\n";
            out += &summary(&outcomes, &SUMMARY_THRESHOLDS, ",")?;
        }
    }
    Ok(out)
}

/// AVG, MED and AUC lines of `outcomes`.
fn summary(outcomes: &[TrialOutcome], thresholds: &[f64], sep: &str) -> Result<String, CliError> {
    let report = aggregate(outcomes, thresholds).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = format!(
        "AVG{sep}{}\nMED{sep}{}\n",
        fmt_f64(report.avg_deg),
        fmt_f64(report.median_deg)
    );
    for (tau, v) in report.auc {
        out += &format!("AUC@{tau}{sep}{}\n", fmt_f64(v));
    }
    Ok(out)
}

/// Per-row errors of an errors table. An all-text first row is a header.
pub fn parse_errors(text: &str) -> Result<Vec<f64>, ParseError> {
    let mut errors = Vec::new();
    let mut first_row = true;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let values: Vec<Option<f64>> = cells.iter().map(|c| c.parse::<f64>().ok()).collect();
        let header = first_row
            && values.iter().all(Option::is_none)
            && cells
                .iter()
                .all(|c| c.starts_with(|ch: char| ch.is_alphabetic()));
        first_row = false;
        if header {
            continue;
        }
        let mut worst: f64 = 0.0;
        for (cell, v) in cells.iter().zip(values) {
            match v {
                Some(x) if x >= 0.0 => worst = worst.max(x),
                Some(x) if x.is_nan() => worst = f64::INFINITY,
                _ => {
                    return Err(ParseError {
                        line: Some(row),
                        message: format!("`{cell}` is not a nonnegative error"),
                    })
                }
            }
        }
        errors.push(worst);
    }
    if errors.is_empty() {
        return Err(ParseError {
            line: None,
            message: "no error rows".into(),
        });
    }
    Ok(errors)
}

/// AVG, MED and AUC at each threshold of an errors table.
pub fn run_eval(args: &EvalArgs) -> Result<String, CliError> {
    let thresholds = parse_float_list(&args.thresholds)
        .map_err(|e| CliError::Usage(format!("--thresholds: {e}")))?;
    if thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(CliError::Usage(
            "--thresholds: thresholds must be positive".into(),
        ));
    }
    let errors = parsed(&args.errors, parse_errors(&read(&args.errors)?))?;
    let outcomes: Vec<TrialOutcome> = errors
        .iter()
        .map(|&e| TrialOutcome {
            error_deg: Some(e),
            inliers: 0,
            runtime_s: 0.0,
        })
        .collect();
    summary(&outcomes, &thresholds, " ")
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Estimate(args) => {
            let result = run_estimate(args)?;
            emit(args.out.as_deref(), &write_result(&result))
        }
        Command::Bench(args) => emit(args.out.as_deref(), &run_bench(args)?),
        Command::Eval(args) => emit(None, &run_eval(args)?),
    }
}
