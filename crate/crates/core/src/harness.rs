//! Monte Carlo experiment runner: per-trial scene synthesis, detection,
//! truth association, and P_d / RMSE aggregation.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_glrt_cd, run_jdl_sic, BaselineParams};
use crate::calibration::binomial_halfwidth;
use crate::config::Scenario;
use crate::detector::{pruning_violations, run_msdis, DetectionReport, GicParams, ScoreMap, Termination};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::{synthesize, TruthTarget};
use crate::seeds::{derive_seed, TAG_GAINS, TAG_NOISE, TAG_TRIAL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    Msdis,
    JdlSic,
    GlrtCd,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Msdis => "msdis",
            DetectorKind::JdlSic => "jdl-sic",
            DetectorKind::GlrtCd => "glrt-cd",
        }
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msdis" => Ok(DetectorKind::Msdis),
            "jdl-sic" => Ok(DetectorKind::JdlSic),
            "glrt-cd" => Ok(DetectorKind::GlrtCd),
            other => Err(Error::Usage(format!(
                "unknown detector '{other}' (expected msdis, jdl-sic or glrt-cd)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub detector: DetectorKind,
    pub snr_sweep: Vec<f64>,
    pub trials: usize,
    pub association_radius: f64,
    pub seed: u64,
    pub target_of_interest: usize,
    pub gic: GicParams,
    pub baseline: BaselineParams,
}

impl ExperimentSpec {
    /// Spec from the scenario's experiment section and calibrated thresholds.
    pub fn from_scenario(scenario: &Scenario, detector: DetectorKind, eta: f64, mf_threshold: f64) -> Self {
        let cfg = &scenario.config;
        Self {
            detector,
            snr_sweep: cfg.experiment.snr_sweep.clone(),
            trials: cfg.experiment.trials,
            association_radius: cfg.association_radius(),
            seed: cfg.seed,
            target_of_interest: cfg.experiment.target_of_interest,
            gic: cfg.detector_params(eta),
            baseline: BaselineParams {
                mf_threshold,
                sic_max_iterations: cfg.experiment.sic_max_iterations,
                cancellation: cfg.experiment.sic_cancellation,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportedTarget {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub iteration: usize,
}

/// One JSON line of raw output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub detector: DetectorKind,
    pub snr_db: f64,
    pub trial: usize,
    pub reported: Vec<ReportedTarget>,
    pub termination: Termination,
    /// Index of the report associated to each truth target, if any.
    pub associations: Vec<Option<usize>>,
    pub toi_detected: bool,
    pub toi_error_m: Option<f64>,
}

/// Greedy one-to-one association: reports in decreasing score order each
/// take the nearest still-free truth within `radius`.
pub fn associate(reports: &[(Point, f64)], truths: &[Point], radius: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[b].1.total_cmp(&reports[a].1).then(a.cmp(&b)));
    let mut out = vec![None; truths.len()];
    for r in order {
        let best = truths
            .iter()
            .enumerate()
            .filter(|(t, _)| out[*t].is_none())
            .map(|(t, x)| (t, x.distance(&reports[r].0)))
            .filter(|&(_, d)| d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((t, _)) = best {
            out[t] = Some(r);
        }
    }
    out
}

/// Truth targets of one trial: the target of interest at `snr_db`, the
/// others shifted by the same offset from their configured SNR.
pub fn trial_targets(scenario: &Scenario, spec: &ExperimentSpec, snr_db: f64, trial: usize) -> Result<Vec<TruthTarget>> {
    let cfg = &scenario.config;
    let toi = spec.target_of_interest;
    let offset = snr_db - cfg.targets.get(toi).map_or(snr_db, |t| t.snr_db);
    cfg.targets
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let seed = derive_seed(spec.seed, &[TAG_TRIAL, trial as u64, TAG_GAINS, k as u64]);
            TruthTarget::new(&scenario.model, t.position, t.snr_db + offset, seed)
        })
        .collect()
}

/// Runs one detector on one synthesized trial.
pub fn run_detector(
    scenario: &Scenario,
    spec: &ExperimentSpec,
    truths: &[TruthTarget],
    trial: usize,
    record_maps: bool,
) -> Result<DetectionReport> {
    let noise_seed = derive_seed(spec.seed, &[TAG_TRIAL, trial as u64, TAG_NOISE]);
    let model = &scenario.model;
    match spec.detector {
        DetectorKind::Msdis => {
            let r = synthesize(model, truths, noise_seed);
            run_msdis(model, &scenario.candidates, &scenario.grid, Some(&scenario.fine_grid), &spec.gic, &r, record_maps)
        }
        DetectorKind::JdlSic => {
            let r = synthesize(model, truths, noise_seed);
            run_jdl_sic(model, &scenario.candidates, &scenario.grid, &r, &spec.baseline, record_maps)
        }
        DetectorKind::GlrtCd => {
            let only = truths.get(spec.target_of_interest).cloned().into_iter().collect::<Vec<_>>();
            let r = synthesize(model, &only, noise_seed);
            run_glrt_cd(model, &scenario.candidates, &scenario.grid, &r, &spec.gic, record_maps)
        }
    }
}

/// Synthesizes, detects and associates one trial. Reported pairs violating
/// the pruning rule are a hard error.
pub fn run_trial(scenario: &Scenario, spec: &ExperimentSpec, snr_db: f64, trial: usize) -> Result<TrialRecord> {
    let truths = trial_targets(scenario, spec, snr_db, trial)?;
    let report = run_detector(scenario, spec, &truths, trial, false)?;
    let locations = report.locations();
    let bad = pruning_violations(&scenario.model.layout, &locations, scenario.model.bandwidth());
    if !bad.is_empty() {
        return Err(Error::Invariant(format!(
            "{} reported non-separable pairs {bad:?} at snr {snr_db} trial {trial}",
            spec.detector.name()
        )));
    }
    let reports: Vec<(Point, f64)> = report.targets.iter().map(|t| (t.location, t.score)).collect();
    let truth_points: Vec<Point> = truths.iter().map(|t| t.location).collect();
    let associations = associate(&reports, &truth_points, spec.association_radius);
    let toi = associations.get(spec.target_of_interest).copied().flatten();
    Ok(TrialRecord {
        detector: spec.detector,
        snr_db,
        trial,
        reported: report
            .targets
            .iter()
            .map(|t| ReportedTarget { x: t.location.x, y: t.location.y, score: t.score, iteration: t.iteration })
            .collect(),
        termination: report.termination,
        associations,
        toi_detected: toi.is_some(),
        toi_error_m: toi.map(|r| reports[r].0.distance(&truth_points[spec.target_of_interest])),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub snr_db: f64,
    pub pd: f64,
    pub pd_halfwidth: f64,
    /// Conditional RMSE over trials where the target of interest was
    /// associated; NaN when it never was.
    pub rmse_m: f64,
    pub n_associated: usize,
    pub mean_count: f64,
    #[serde(skip)]
    pub runtime_s: f64,
}

impl MetricsRow {
    pub fn from_records(snr_db: f64, records: &[TrialRecord], runtime_s: f64) -> Self {
        let n = records.len();
        let errors: Vec<f64> = records.iter().filter_map(|r| r.toi_error_m).collect();
        let pd = errors.len() as f64 / n as f64;
        let rmse = if errors.is_empty() {
            f64::NAN
        } else {
            (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
        };
        Self {
            snr_db,
            pd,
            pd_halfwidth: binomial_halfwidth(pd, n),
            rmse_m: rmse,
            n_associated: errors.len(),
            mean_count: records.iter().map(|r| r.reported.len()).sum::<usize>() as f64 / n as f64,
            runtime_s,
        }
    }
}

pub const METRICS_HEADER: &str = "snr_db,pd,pd_halfwidth,rmse_m,n_associated,mean_count";

/// CSV table with a header line; always ends with a newline.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.snr_db, r.pd, r.pd_halfwidth, r.rmse_m, r.n_associated, r.mean_count);
    }
    out
}

pub fn records_jsonl(records: &[TrialRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// All trials of one SNR point, ordered by trial index.
pub fn run_point(scenario: &Scenario, spec: &ExperimentSpec, snr_db: f64) -> Result<Vec<TrialRecord>> {
    (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(scenario, spec, snr_db, t))
        .collect()
}

pub fn run_sweep(scenario: &Scenario, spec: &ExperimentSpec) -> Result<(Vec<MetricsRow>, Vec<TrialRecord>)> {
    let mut rows = Vec::with_capacity(spec.snr_sweep.len());
    let mut all = Vec::new();
    for &snr in &spec.snr_sweep {
        let start = Instant::now();
        let records = run_point(scenario, spec, snr)?;
        let row = MetricsRow::from_records(snr, &records, start.elapsed().as_secs_f64());
        log::info!(
            "{} snr {snr} dB: pd {:.3} rmse {:.2} m ({:.1} s)",
            spec.detector.name(),
            row.pd,
            row.rmse_m,
            row.runtime_s
        );
        rows.push(row);
        all.extend(records);
    }
    Ok((rows, all))
}

/// Per-iteration score maps of MSD-IS and MF+SIC on one trial.
#[derive(Clone, Debug)]
pub struct ScoreMapCapture {
    pub truths: Vec<Point>,
    pub msdis: DetectionReport,
    pub jdl_sic: DetectionReport,
}

pub fn capture_score_maps(scenario: &Scenario, spec: &ExperimentSpec, snr_db: f64, trial: usize) -> Result<ScoreMapCapture> {
    let truths = trial_targets(scenario, spec, snr_db, trial)?;
    let msdis_spec = ExperimentSpec { detector: DetectorKind::Msdis, ..spec.clone() };
    let sic_spec = ExperimentSpec { detector: DetectorKind::JdlSic, ..spec.clone() };
    Ok(ScoreMapCapture {
        truths: truths.iter().map(|t| t.location).collect(),
        msdis: run_detector(scenario, &msdis_spec, &truths, trial, true)?,
        jdl_sic: run_detector(scenario, &sic_spec, &truths, trial, true)?,
    })
}

/// Long-format CSV of score maps: one row per grid point and iteration.
/// Inactive points have an empty score; `truth`/`estimate` flag annotations.
pub fn score_maps_csv(scenario: &Scenario, capture: &ScoreMapCapture) -> String {
    let mut out = String::from("detector,iteration,index,x,y,active,score,estimate,truth\n");
    let points = scenario.grid.points();
    let truth_idx: Vec<Option<usize>> = capture.truths.iter().map(|t| scenario.grid.nearest_index(t)).collect();
    for report in [&capture.msdis, &capture.jdl_sic] {
        for map in &report.score_maps {
            let est = report.targets.iter().find(|t| t.iteration == map.iteration).map(|t| t.grid_index);
            for (i, s) in map.scores.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    report.detector,
                    map.iteration,
                    i,
                    points[i].x,
                    points[i].y,
                    u8::from(s.is_some()),
                    s.map(|v| v.to_string()).unwrap_or_default(),
                    u8::from(est == Some(i)),
                    u8::from(truth_idx.contains(&Some(i)))
                );
            }
        }
    }
    out
}

/// Largest active score within `radius` of `center` in one map.
pub fn max_score_near(scenario: &Scenario, map: &ScoreMap, center: &Point, radius: f64) -> Option<f64> {
    map.scores
        .iter()
        .zip(scenario.grid.points())
        .filter(|(_, g)| g.distance(center) <= radius)
        .filter_map(|(s, _)| *s)
        .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
}
