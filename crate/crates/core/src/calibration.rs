//! Monte Carlo choice of the GIC penalty (and of the MF+SIC threshold) for
//! a requested false-alarm probability.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::mf_map;
use crate::detector::{detect_iteration, whiten_measurements, CandidateBank, DetectionState, GicParams};
use crate::error::{Error, Result};
use crate::geometry::SearchGrid;
use crate::scene::{noise, MeasurementSet, RadarModel};
use crate::seeds::{derive_seed, TAG_CALIBRATION, TAG_VALIDATION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// GIC penalty `eta` per unit rank.
    Gic,
    /// Threshold on the matched-filter map.
    Mf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Quantile,
    Bisection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub statistic: Statistic,
    /// `eta` for the GIC statistic, the raw threshold for MF.
    pub eta: f64,
    pub target_pfa: f64,
    pub achieved_pfa: f64,
    /// 95 % normal-approximation half-width of `achieved_pfa`.
    pub achieved_halfwidth: f64,
    pub trials: usize,
    pub validation_trials: usize,
    pub seed: u64,
    pub method: Method,
}

/// Both calibrations, persisted together so sweeps can reuse them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub gic: CalibrationResult,
    pub mf: CalibrationResult,
}

impl CalibrationFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("{}: {e}", path.display())))
    }
}

/// Normal-approximation 95 % half-width of a binomial proportion.
pub fn binomial_halfwidth(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

fn noise_only(model: &RadarModel, seed: u64) -> Vec<DVector<Complex64>> {
    let r = MeasurementSet { vectors: noise(model, seed), window: model.window };
    whiten_measurements(model, &r)
}

/// Per-point `(sum_p ||Pi_p y_p||^2, sum_p rank Pi_p)` at the first iteration.
fn first_iteration_terms(bank: &CandidateBank, grid: &SearchGrid, y: &[DVector<Complex64>]) -> Vec<(f64, usize)> {
    grid.active_indices()
        .map(|i| {
            (0..y.len()).fold((0.0, 0usize), |(e, r), p| {
                let span = bank.span(i, p);
                (e + span.energy(&y[p]), r + span.rank())
            })
        })
        .collect()
}

/// Smallest threshold `t` such that the fraction of `stats` strictly above
/// `t` equals `round(target_pfa * n)` / n (midpoint between order statistics).
pub fn quantile_threshold(stats: &[f64], target_pfa: f64) -> f64 {
    let mut sorted = stats.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let exceed = ((target_pfa * n as f64).round() as usize).clamp(1, n - 1);
    let q = n - exceed;
    0.5 * (sorted[q - 1] + sorted[q])
}

fn check_inputs(target_pfa: f64, trials: usize, validation_trials: usize) -> Result<()> {
    if !(target_pfa > 0.0 && target_pfa < 1.0) {
        return Err(Error::Usage(format!("target P_fa must be in (0, 1), got {target_pfa}")));
    }
    if trials < 100 || validation_trials == 0 {
        return Err(Error::Usage("calibration needs at least 100 trials".into()));
    }
    if (trials as f64) * target_pfa < 10.0 {
        log::warn!("only {} expected exceedances; the threshold will be noisy", trials as f64 * target_pfa);
    }
    Ok(())
}

/// Chooses `eta` so that the first GIC test fires on pure noise with
/// probability `target_pfa`, then re-estimates the rate on a fresh batch by
/// running the actual first-iteration test.
///
/// When the total projector rank is the same at every grid point, the test
/// fires iff `max_g E(g) / R > eta`, so `eta` is an empirical quantile of
/// that statistic. Otherwise `eta` is found by bisection on the empirical
/// rate of `max_g (E(g) - eta R(g)) > 0`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_eta(
    model: &RadarModel,
    bank: &CandidateBank,
    grid: &SearchGrid,
    params: &GicParams,
    target_pfa: f64,
    trials: usize,
    validation_trials: usize,
    seed: u64,
) -> Result<CalibrationResult> {
    check_inputs(target_pfa, trials, validation_trials)?;
    let terms: Vec<Vec<(f64, usize)>> = (0..trials)
        .into_par_iter()
        .map(|j| first_iteration_terms(bank, grid, &noise_only(model, derive_seed(seed, &[TAG_CALIBRATION, j as u64]))))
        .collect();
    let ranks: Vec<usize> = terms.first().map(|t| t.iter().map(|x| x.1).collect()).unwrap_or_default();
    let constant_rank = ranks.first().is_some_and(|&r0| r0 > 0 && ranks.iter().all(|&r| r == r0));

    let (eta, method) = if constant_rank {
        let r = ranks[0] as f64;
        let stats: Vec<f64> =
            terms.iter().map(|t| t.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max) / r).collect();
        (quantile_threshold(&stats, target_pfa), Method::Quantile)
    } else {
        (bisect_eta(&terms, target_pfa), Method::Bisection)
    };

    let tuned = GicParams { eta, ..params.clone() };
    let hits: usize = (0..validation_trials)
        .into_par_iter()
        .map(|j| {
            let y = noise_only(model, derive_seed(seed, &[TAG_VALIDATION, j as u64]));
            let state = DetectionState::new(model, grid);
            let out = detect_iteration(&state, &tuned, bank, &y).expect("non-empty grid");
            usize::from(out.accepted)
        })
        .sum();
    let achieved = hits as f64 / validation_trials as f64;
    Ok(CalibrationResult {
        statistic: Statistic::Gic,
        eta,
        target_pfa,
        achieved_pfa: achieved,
        achieved_halfwidth: binomial_halfwidth(achieved, validation_trials),
        trials,
        validation_trials,
        seed,
        method,
    })
}

/// Empirical false-alarm rate of penalty `eta` on stored noise terms.
pub fn empirical_pfa(terms: &[Vec<(f64, usize)>], eta: f64) -> f64 {
    let fired = terms
        .iter()
        .filter(|t| t.iter().any(|&(e, r)| e - eta * r as f64 > 0.0))
        .count();
    fired as f64 / terms.len() as f64
}

/// Smallest `eta` on the bisection bracket whose empirical rate does not
/// exceed `target_pfa`.
pub fn bisect_eta(terms: &[Vec<(f64, usize)>], target_pfa: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = terms
        .iter()
        .flat_map(|t| t.iter().filter(|x| x.1 > 0).map(|&(e, r)| e / r as f64))
        .fold(0.0, f64::max)
        * 1.01
        + 1e-12;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if empirical_pfa(terms, mid) > target_pfa {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    hi
}

/// Threshold on the first-iteration matched-filter map for `target_pfa`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_mf_threshold(
    model: &RadarModel,
    bank: &CandidateBank,
    grid: &SearchGrid,
    target_pfa: f64,
    trials: usize,
    validation_trials: usize,
    seed: u64,
) -> Result<CalibrationResult> {
    check_inputs(target_pfa, trials, validation_trials)?;
    let peak = |y: &[DVector<Complex64>]| {
        mf_map(bank, grid, y).into_iter().flatten().fold(f64::NEG_INFINITY, f64::max)
    };
    let stats: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|j| peak(&noise_only(model, derive_seed(seed, &[TAG_CALIBRATION, j as u64]))))
        .collect();
    let threshold = quantile_threshold(&stats, target_pfa);
    let hits: usize = (0..validation_trials)
        .into_par_iter()
        .map(|j| usize::from(peak(&noise_only(model, derive_seed(seed, &[TAG_VALIDATION, j as u64]))) > threshold))
        .sum();
    let achieved = hits as f64 / validation_trials as f64;
    Ok(CalibrationResult {
        statistic: Statistic::Mf,
        eta: threshold,
        target_pfa,
        achieved_pfa: achieved,
        achieved_halfwidth: binomial_halfwidth(achieved, validation_trials),
        trials,
        validation_trials,
        seed,
        method: Method::Quantile,
    })
}

/// Stored first-iteration noise terms, for inspecting the rate/penalty curve.
pub fn noise_terms(
    model: &RadarModel,
    bank: &CandidateBank,
    grid: &SearchGrid,
    trials: usize,
    seed: u64,
) -> Vec<Vec<(f64, usize)>> {
    (0..trials)
        .into_par_iter()
        .map(|j| first_iteration_terms(bank, grid, &noise_only(model, derive_seed(seed, &[TAG_CALIBRATION, j as u64]))))
        .collect()
}
