//! Reference receivers: matched filtering with successive interference
//! cancellation (MF+SIC), and the clairvoyant single-target GLRT.

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    argmax, hstack, run_msdis, whiten_measurements, CandidateBank, Detection, DetectionReport,
    GicParams, ScoreMap, Termination,
};
use crate::error::{Error, Result};
use crate::geometry::{prune_grid, SearchGrid};
use crate::scene::{MeasurementSet, RadarModel};
use crate::subspace::least_squares;

/// How MF+SIC removes the contribution of detected targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SicCancellation {
    /// Works on the matched-filter outputs under the ideal-waveform model
    /// (thumb-tack auto-correlation, zero cross-correlation): the detected
    /// output of each (receiver, transmitter) pair is subtracted wherever the
    /// candidate delay is within `1/W` of the detected one, and nowhere else.
    #[default]
    IdealResponse,
    /// Each new echo is fitted column by column on the current residual data,
    /// `a_pn = s_pn^H e_p / ||s_pn||^2`, and subtracted.
    PerColumn,
    /// All detected echoes are re-fitted jointly by least squares on the
    /// original data at every step and subtracted.
    JointLeastSquares,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    /// Threshold on the matched-filter map.
    pub mf_threshold: f64,
    pub sic_max_iterations: usize,
    #[serde(default)]
    pub cancellation: SicCancellation,
}

/// Noncoherent sum of normalized matched-filter outputs,
/// `sum_p sum_n |a_pn(g)^H y_p|^2 / ||a_pn(g)||^2` with `a_pn` the whitened
/// signature, evaluated at grid point `index`.
pub fn mf_value(bank: &CandidateBank, whitened: &[DVector<Complex64>], index: usize) -> f64 {
    whitened
        .iter()
        .enumerate()
        .map(|(p, y)| {
            bank.mode(index, p)
                .column_iter()
                .map(|a| {
                    let e = a.norm_squared();
                    if e > 0.0 {
                        a.dotc(y).norm_sqr() / e
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum()
}

/// Matched-filter map over the active points of `grid`.
pub fn mf_map(bank: &CandidateBank, grid: &SearchGrid, whitened: &[DVector<Complex64>]) -> Vec<Option<f64>> {
    (0..grid.len())
        .into_par_iter()
        .map(|i| grid.is_active(i).then(|| mf_value(bank, whitened, i)))
        .collect()
}

/// Normalized matched-filter outputs `a_pn(g)^H y_p / ||a_pn(g)||`, indexed
/// `[p][n]`, for grid point `index`.
fn mf_outputs(bank: &CandidateBank, whitened: &[DVector<Complex64>], index: usize) -> Vec<Vec<Complex64>> {
    whitened
        .iter()
        .enumerate()
        .map(|(p, y)| {
            bank.mode(index, p)
                .column_iter()
                .map(|a| {
                    let e = a.norm();
                    if e > 0.0 { a.dotc(y) / e } else { Complex64::new(0.0, 0.0) }
                })
                .collect()
        })
        .collect()
}

fn output_power(z: &[Vec<Complex64>]) -> f64 {
    z.iter().flatten().map(|v| v.norm_sqr()).sum()
}

/// MF+SIC: peak-pick the matched-filter map, cancel the detected target,
/// prune and repeat.
pub fn run_jdl_sic(
    model: &RadarModel,
    bank: &CandidateBank,
    grid: &SearchGrid,
    measurements: &MeasurementSet,
    params: &BaselineParams,
    record_maps: bool,
) -> Result<DetectionReport> {
    if params.sic_max_iterations == 0 {
        return Err(Error::Usage("sic_max_iterations must be at least 1".into()));
    }
    let whitened = whiten_measurements(model, measurements);
    let mut residual = whitened.clone();
    let mut outputs: Vec<Vec<Vec<Complex64>>> =
        (0..grid.len()).into_par_iter().map(|i| mf_outputs(bank, &whitened, i)).collect();
    let resolution = 1.0 / model.bandwidth();
    let layout = &model.layout;
    let mut active = grid.clone();
    let mut targets: Vec<Detection> = Vec::new();
    let mut maps = Vec::new();
    let mut iterations = 0;
    let termination = loop {
        if active.active_count() == 0 {
            break Termination::EmptyGrid;
        }
        let iteration = iterations + 1;
        let scores: Vec<Option<f64>> = (0..grid.len())
            .map(|i| active.is_active(i).then(|| output_power(&outputs[i])))
            .collect();
        iterations = iteration;
        let (index, score) = argmax(&scores).expect("active grid is non-empty");
        if record_maps {
            maps.push(ScoreMap { iteration, scores });
        }
        if !(score > params.mf_threshold) {
            break Termination::NoDetection;
        }
        let location = active.points()[index];
        let mut deficient = false;
        let mut gains = Vec::with_capacity(model.n_rx());
        match params.cancellation {
            SicCancellation::IdealResponse => {
                let peak = outputs[index].clone();
                for (p, row) in peak.iter().enumerate() {
                    let norms: Vec<f64> = bank.mode(index, p).column_iter().map(|c| c.norm()).collect();
                    gains.push(DVector::from_iterator(
                        row.len(),
                        row.iter().zip(&norms).map(|(z, e)| if *e > 0.0 { z / e } else { Complex64::new(0.0, 0.0) }),
                    ));
                }
                let points = grid.points();
                outputs.par_iter_mut().enumerate().for_each(|(i, z)| {
                    for (p, row) in z.iter_mut().enumerate() {
                        for (n, v) in row.iter_mut().enumerate() {
                            let gap = (layout.delay(p, n, &points[i]) - layout.delay(p, n, &location)).abs();
                            if gap <= resolution {
                                *v -= peak[p][n];
                            }
                        }
                    }
                });
            }
            SicCancellation::PerColumn => {
                for (p, r) in residual.iter_mut().enumerate() {
                    let a = bank.mode(index, p);
                    let g = DVector::from_iterator(
                        a.ncols(),
                        a.column_iter().map(|c| {
                            let e = c.norm_squared();
                            if e > 0.0 { c.dotc(r) / e } else { Complex64::new(0.0, 0.0) }
                        }),
                    );
                    *r -= a * &g;
                    gains.push(g);
                }
            }
            SicCancellation::JointLeastSquares => {
                for (p, y) in whitened.iter().enumerate() {
                    let mut blocks: Vec<_> = targets.iter().map(|t| bank.mode(t.grid_index, p)).collect();
                    blocks.push(bank.mode(index, p));
                    let stacked = hstack(&blocks);
                    let (sol, rd) = least_squares(&stacked, y, bank.rank_tol());
                    deficient |= rd;
                    residual[p] = y - &stacked * &sol;
                    let n = model.n_tx();
                    gains.push(sol.rows(sol.len() - n, n).into_owned());
                }
            }
        }
        if params.cancellation != SicCancellation::IdealResponse {
            outputs = (0..grid.len()).into_par_iter().map(|i| mf_outputs(bank, &residual, i)).collect();
        }
        active = prune_grid(&active, layout, &[location], model.bandwidth());
        targets.push(Detection { location, grid_index: index, score, iteration, gains, rank_deficient: deficient });
        if iteration == params.sic_max_iterations {
            break Termination::KMax;
        }
    };
    Ok(DetectionReport { detector: "jdl-sic".into(), targets, termination, iterations, score_maps: maps })
}

/// Clairvoyant single-target benchmark: one GIC test on data that contain
/// only the target of interest.
pub fn run_glrt_cd(
    model: &RadarModel,
    bank: &CandidateBank,
    grid: &SearchGrid,
    single_target_measurements: &MeasurementSet,
    params: &GicParams,
    record_maps: bool,
) -> Result<DetectionReport> {
    let single = GicParams { k_max: 1, mitigation: false, ..params.clone() };
    let mut report = run_msdis(model, bank, grid, None, &single, single_target_measurements, record_maps)?;
    report.detector = "glrt-cd".into();
    Ok(report)
}
