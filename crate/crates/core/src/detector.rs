//! Sequential subspace detection with interference suppression.
//!
//! Each iteration scores every active grid point with a penalized projected
//! energy (GIC), accepts the best candidate if its score is positive, then
//! grows the interference subspace and prunes the grid around the new
//! detection. Interference from earlier detections is removed by projecting
//! each candidate's whitened mode matrix onto the orthogonal complement of
//! that subspace before measuring energy.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{prune_grid, FineGrid, Point, RadarLayout, SearchGrid};
use crate::scene::{MeasurementSet, RadarModel};
use crate::subspace::{
    column_space_projector, gram_spectrum, least_squares, residual_projector_scaled, spectral_norm,
    Projector, DEFAULT_RANK_TOL,
};

/// Largest mitigation ball used for the interference SVD.
pub const DEFAULT_BALL_CAP: usize = 512;

/// Default significance level as a fraction of the per-sample noise power.
pub const DEFAULT_EPSILON_FRACTION: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GicParams {
    /// Penalty per unit of projector rank.
    pub eta: f64,
    pub k_max: usize,
    /// Singular-value significance; `None` means 1e-2 x trace(C_p)/M.
    pub epsilon: Option<f64>,
    pub mitigation: bool,
    pub rank_tol: f64,
    pub ball_cap: usize,
}

impl Default for GicParams {
    fn default() -> Self {
        Self {
            eta: 0.0,
            k_max: 5,
            epsilon: None,
            mitigation: true,
            rank_tol: DEFAULT_RANK_TOL,
            ball_cap: DEFAULT_BALL_CAP,
        }
    }
}

impl GicParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || self.k_max == 0 || self.epsilon.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::Config(format!("invalid detector parameters {self:?}")));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::Config(format!("rank tolerance {} out of (0, 1)", self.rank_tol)));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, model: &RadarModel, p: usize) -> f64 {
        self.epsilon
            .unwrap_or_else(|| DEFAULT_EPSILON_FRACTION * model.noise.mean_power(p))
    }
}

/// Whitened mode matrices `C_p^{-1/2} S_p(g)` for every coarse grid point,
/// with their column-span projectors. Built once and shared by all trials.
#[derive(Clone, Debug)]
pub struct CandidateBank {
    // [grid index][receiver]
    modes: Vec<Vec<DMatrix<Complex64>>>,
    norms: Vec<Vec<f64>>,
    spans: Vec<Vec<Projector>>,
    rank_tol: f64,
}

impl CandidateBank {
    pub fn new(model: &RadarModel, grid: &SearchGrid, rank_tol: f64) -> Self {
        let per_point: Vec<_> = grid
            .points()
            .par_iter()
            .map(|g| {
                let modes: Vec<_> = (0..model.n_rx()).map(|p| model.whitened_mode(p, g)).collect();
                let norms: Vec<_> = modes.iter().map(spectral_norm).collect();
                let spans: Vec<_> =
                    modes.iter().map(|a| column_space_projector(a, rank_tol)).collect();
                (modes, norms, spans)
            })
            .collect();
        let mut bank = Self {
            modes: Vec::with_capacity(per_point.len()),
            norms: Vec::with_capacity(per_point.len()),
            spans: Vec::with_capacity(per_point.len()),
            rank_tol,
        };
        for (m, n, s) in per_point {
            bank.modes.push(m);
            bank.norms.push(n);
            bank.spans.push(s);
        }
        bank
    }

    pub fn mode(&self, index: usize, p: usize) -> &DMatrix<Complex64> {
        &self.modes[index][p]
    }

    pub fn span(&self, index: usize, p: usize) -> &Projector {
        &self.spans[index][p]
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn rank_tol(&self) -> f64 {
        self.rank_tol
    }

    /// `Pi_p(g)` given the current interference projector.
    pub fn residual_projector(&self, index: usize, p: usize, interference: &Projector) -> Projector {
        if interference.rank() == 0 {
            return self.spans[index][p].clone();
        }
        residual_projector_scaled(&self.modes[index][p], self.norms[index][p], interference, self.rank_tol)
    }

    /// `(||Pi_p(g) y_p||^2, rank Pi_p(g))` for one receiver.
    pub fn receiver_energy(
        &self,
        index: usize,
        p: usize,
        interference: &Projector,
        whitened: &DVector<Complex64>,
    ) -> (f64, usize) {
        if interference.rank() == 0 {
            let span = &self.spans[index][p];
            return (span.energy(whitened), span.rank());
        }
        let pi = self.residual_projector(index, p, interference);
        (pi.energy(whitened), pi.rank())
    }
}

/// One accepted target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Detection {
    pub location: Point,
    pub grid_index: usize,
    pub score: f64,
    pub iteration: usize,
    /// Per-receiver gain estimates (length N each).
    #[serde(serialize_with = "serialize_gains")]
    pub gains: Vec<DVector<Complex64>>,
    pub rank_deficient: bool,
}

/// Gains as `[[re, im], ...]` per receiver.
fn serialize_gains<S: serde::Serializer>(gains: &[DVector<Complex64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    let pairs: Vec<Vec<[f64; 2]>> = gains.iter().map(|g| g.iter().map(|c| [c.re, c.im]).collect()).collect();
    pairs.serialize(s)
}

/// Mutable state between iterations.
#[derive(Clone, Debug)]
pub struct DetectionState {
    pub iteration: usize,
    pub detections: Vec<Detection>,
    pub interference: Vec<Projector>,
    /// Columns spanning each receiver's interference subspace.
    retained: Vec<DMatrix<Complex64>>,
    pub active_grid: SearchGrid,
}

impl DetectionState {
    pub fn new(model: &RadarModel, grid: &SearchGrid) -> Self {
        let m = model.samples();
        Self {
            iteration: 1,
            detections: Vec::new(),
            interference: vec![Projector::zero(m); model.n_rx()],
            retained: vec![DMatrix::zeros(m, 0); model.n_rx()],
            active_grid: grid.clone(),
        }
    }

    pub fn interference_ranks(&self) -> Vec<usize> {
        self.interference.iter().map(Projector::rank).collect()
    }
}

/// `C_p^{-1/2} r_p` for every receiver.
pub fn whiten_measurements(model: &RadarModel, r: &MeasurementSet) -> Vec<DVector<Complex64>> {
    r.vectors
        .iter()
        .enumerate()
        .map(|(p, v)| model.whitener(p).whiten_vector(v))
        .collect()
}

/// GIC score of grid point `index`:
/// `sum_p ( ||Pi_p y_p||^2 - eta * rank Pi_p )`.
pub fn gic_score(
    state: &DetectionState,
    params: &GicParams,
    bank: &CandidateBank,
    whitened: &[DVector<Complex64>],
    index: usize,
) -> f64 {
    whitened
        .iter()
        .enumerate()
        .map(|(p, y)| {
            let (energy, rank) = bank.receiver_energy(index, p, &state.interference[p], y);
            energy - params.eta * rank as f64
        })
        .sum()
}

/// Score map over the whole grid; `None` marks inactive points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreMap {
    pub iteration: usize,
    pub scores: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationOutcome {
    pub accepted: bool,
    pub grid_index: usize,
    pub location: Point,
    pub score: f64,
    pub map: ScoreMap,
}

/// Index and value of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[Option<f64>]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best
}

/// Maximizes the score over the active grid and tests it against zero.
pub fn detect_iteration(
    state: &DetectionState,
    params: &GicParams,
    bank: &CandidateBank,
    whitened: &[DVector<Complex64>],
) -> Result<IterationOutcome> {
    let grid = &state.active_grid;
    let scores: Vec<Option<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| grid.is_active(i).then(|| gic_score(state, params, bank, whitened, i)))
        .collect();
    let (index, score) =
        argmax(&scores).ok_or_else(|| Error::Usage("detection on an empty search set".into()))?;
    Ok(IterationOutcome {
        accepted: score > 0.0,
        grid_index: index,
        location: grid.points()[index],
        score,
        map: ScoreMap { iteration: state.iteration, scores },
    })
}

/// Joint least-squares gains of all detected modes plus the new one, against
/// each whitened measurement; returns the last `N` entries per receiver.
pub fn estimate_gains(
    state: &DetectionState,
    bank: &CandidateBank,
    whitened: &[DVector<Complex64>],
    index: usize,
) -> (Vec<DVector<Complex64>>, bool) {
    let mut deficient = false;
    let gains = whitened
        .iter()
        .enumerate()
        .map(|(p, y)| {
            let mut blocks: Vec<&DMatrix<Complex64>> =
                state.detections.iter().map(|d| bank.mode(d.grid_index, p)).collect();
            blocks.push(bank.mode(index, p));
            let stacked = hstack(&blocks);
            let (sol, rd) = least_squares(&stacked, y, bank.rank_tol());
            deficient |= rd;
            let n = bank.mode(index, p).ncols();
            sol.rows(sol.len() - n, n).into_owned()
        })
        .collect();
    (gains, deficient)
}

pub(crate) fn hstack(blocks: &[&DMatrix<Complex64>]) -> DMatrix<Complex64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((0, at), (rows, b.ncols())).copy_from(b);
        at += b.ncols();
    }
    out
}

/// Number of leading singular vectors to keep: the smallest `U >= 1` with
/// `(|a|^2 / B) * sum_{m > U} lambda_m < epsilon`, where `lambda` are the
/// squared singular values in decreasing order and `B` the ball size.
pub fn retained_count(squared_singular: &[f64], gain_power: f64, ball: usize, epsilon: f64) -> usize {
    let weight = gain_power / ball as f64;
    let mut tail: f64 = squared_singular.iter().skip(1).sum();
    let mut u = 1;
    while u < squared_singular.len() && !(weight * tail < epsilon) {
        tail -= squared_singular[u];
        u += 1;
    }
    u
}

/// Grows the interference subspace with the target accepted at grid point
/// `index`, whose gain estimates are `gains`.
///
/// Without mitigation the whitened mode matrix itself is appended. With
/// mitigation, each transmitter's signatures over the fine-grid ball around
/// the detection are projected away from the current interference, and the
/// dominant left singular vectors are kept. The projector is then rebuilt from
/// every column retained so far.
#[allow(clippy::too_many_arguments)]
pub fn update_interference(
    state: &mut DetectionState,
    params: &GicParams,
    model: &RadarModel,
    bank: &CandidateBank,
    fine_grid: Option<&FineGrid>,
    index: usize,
    gains: &[DVector<Complex64>],
) {
    let x = state.active_grid.points()[index];
    let ball = match (params.mitigation, fine_grid) {
        (true, Some(fine)) => {
            let b = fine.ball(&x, model.resolution_m(), params.ball_cap);
            if b.is_empty() {
                log::warn!("empty mitigation ball around ({}, {}); plain augmentation", x.x, x.y);
            }
            b
        }
        (true, None) => {
            log::warn!("mitigation requested without a fine grid; plain augmentation");
            Vec::new()
        }
        _ => Vec::new(),
    };

    let new_columns: Vec<DMatrix<Complex64>> = (0..model.n_rx())
        .into_par_iter()
        .map(|p| {
            if ball.is_empty() {
                return bank.mode(index, p).clone();
            }
            let eps = params.epsilon_for(model, p);
            let whitener = model.whitener(p);
            let mut keep = Vec::new();
            for (n, a) in gains[p].iter().enumerate() {
                let sigs: Vec<_> = ball.iter().map(|g| model.signature(p, n, g)).collect();
                let e = whitener.whiten_matrix(&DMatrix::from_columns(&sigs));
                let z = state.interference[p].reject(&e);
                let (u, lambda) = gram_spectrum(&z);
                let count = retained_count(&lambda, a.norm_sqr(), ball.len(), eps);
                keep.extend(u.columns(0, count.min(u.ncols())).column_iter().map(|c| c.into_owned()));
            }
            DMatrix::from_columns(&keep)
        })
        .collect();

    for (p, cols) in new_columns.into_iter().enumerate() {
        let all = hstack(&[&state.retained[p], &cols]);
        state.interference[p] = column_space_projector(&all, bank.rank_tol());
        state.retained[p] = all;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    NoDetection,
    EmptyGrid,
    KMax,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionReport {
    pub detector: String,
    pub targets: Vec<Detection>,
    pub termination: Termination,
    /// Number of tests performed.
    pub iterations: usize,
    pub score_maps: Vec<ScoreMap>,
}

impl DetectionReport {
    pub fn locations(&self) -> Vec<Point> {
        self.targets.iter().map(|t| t.location).collect()
    }
}

/// Full sequential procedure. Terminates when a test rejects, when the
/// search set empties, or after `k_max` tests; the number of reported
/// targets equals the number of accepted tests.
#[allow(clippy::too_many_arguments)]
pub fn run_msdis(
    model: &RadarModel,
    bank: &CandidateBank,
    grid: &SearchGrid,
    fine_grid: Option<&FineGrid>,
    params: &GicParams,
    measurements: &MeasurementSet,
    record_maps: bool,
) -> Result<DetectionReport> {
    params.validate()?;
    let whitened = whiten_measurements(model, measurements);
    let mut state = DetectionState::new(model, grid);
    let mut maps = Vec::new();
    let mut iterations = 0;
    let termination = loop {
        if state.active_grid.active_count() == 0 {
            break Termination::EmptyGrid;
        }
        let outcome = detect_iteration(&state, params, bank, &whitened)?;
        iterations += 1;
        if record_maps {
            maps.push(outcome.map.clone());
        }
        if !outcome.accepted {
            break Termination::NoDetection;
        }
        let (gains, rank_deficient) = estimate_gains(&state, bank, &whitened, outcome.grid_index);
        if rank_deficient {
            log::debug!("rank-deficient gain estimate at iteration {}", state.iteration);
        }
        update_interference(&mut state, params, model, bank, fine_grid, outcome.grid_index, &gains);
        state.active_grid =
            prune_grid(&state.active_grid, &model.layout, &[outcome.location], model.bandwidth());
        state.detections.push(Detection {
            location: outcome.location,
            grid_index: outcome.grid_index,
            score: outcome.score,
            iteration: state.iteration,
            gains,
            rank_deficient,
        });
        if state.iteration == params.k_max {
            break Termination::KMax;
        }
        state.iteration += 1;
    };
    Ok(DetectionReport {
        detector: "msdis".into(),
        targets: state.detections,
        termination,
        iterations,
        score_maps: maps,
    })
}

/// Pairs of reported locations that violate the pruning rule, i.e. are not
/// separable by more than `1/W` in any (receiver, transmitter) pair.
pub fn pruning_violations(layout: &RadarLayout, points: &[Point], bandwidth_hz: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if !layout.are_separable(&points[i], &points[j], bandwidth_hz) {
                out.push((i, j));
            }
        }
    }
    out
}
