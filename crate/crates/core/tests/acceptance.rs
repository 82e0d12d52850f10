//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use common::*;
use msdis::calibration::{calibrate_eta, calibrate_mf_threshold, CalibrationResult};
use msdis::config::{Scenario, TargetConfig};
use msdis::detector::*;
use msdis::geometry::Point;
use msdis::harness::*;
use msdis::scene::{synthesize, NoiseModel, RadarModel};
use msdis::subspace::{column_space_projector, residual_target_projector, Whitener};
use msdis::waveform::PhaseCodeBank;

const PFA: f64 = 0.05;
const PFA_TOL: f64 = 0.015;
const OPERATING_SNR_DB: f64 = 7.0;
const CLOSE_TO_BENCHMARK: f64 = 0.10;
const SIC_MARGIN: f64 = 0.15;
const RESIDUAL_LIMIT: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, limit: Duration, run: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = run();
    let elapsed = start.elapsed();
    if elapsed > limit {
        out.pass = false;
        out.detail.push_str(&format!("; over time limit {}s", limit.as_secs()));
    }
    println!(
        "criterion {id} [{name}]: {} ({}; {:.1}s)",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64()
    );
    out.pass
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<Complex64> {
    let cols: Vec<_> = (0..n).map(|j| random_vector(m, seed.wrapping_mul(1_000_003).wrapping_add(j as u64))).collect();
    DMatrix::from_fn(m, n, |i, j| cols[j][i])
}

fn projector_algebra() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..1000u64 {
        let m = 8 + (k % 41) as usize;
        let n = 1 + (k % 4) as usize;
        let q = (k % 7) as usize;
        let w = Whitener::from_covariance(&random_hpd(m, k)).unwrap();
        let s = w.whiten_matrix(&random_matrix(m, n, k ^ 0x51));
        let xi = column_space_projector(&w.whiten_matrix(&random_matrix(m, q, k ^ 0xE1)), 1e-10);
        let pi = residual_target_projector(&s, &xi, 1e-10).matrix();
        let x = xi.matrix();
        let eig = pi.clone().symmetric_eigen().eigenvalues;
        let spectral = eig.iter().map(|&l| l.abs().min((l - 1.0).abs())).fold(0.0, f64::max);
        worst = worst
            .max((&pi * &pi - &pi).camax())
            .max((&pi - pi.adjoint()).camax())
            .max((&pi * &x).camax())
            .max(spectral);
    }
    Outcome { pass: worst <= 1e-6, detail: format!("1000 instances, worst deviation {worst:.2e}, tolerance 1e-6") }
}

/// Subspace GLRT statistic `y^H C^-1 A (A^H C^-1 A)^-1 A^H C^-1 y` summed over
/// receivers, from raw modes and covariances.
fn brute_force_glrt(model: &RadarModel, cov_inv: &[DMatrix<Complex64>], r: &[DVector<Complex64>], x: &Point) -> f64 {
    (0..model.n_rx())
        .map(|p| {
            let a = model.mode(p, x);
            let ca = &cov_inv[p] * &a;
            let gram = a.adjoint() * &ca;
            let b = ca.adjoint() * &r[p];
            let coef = gram.lu().solve(&b).unwrap();
            (b.adjoint() * coef)[(0, 0)].re
        })
        .sum()
}

fn oracle_equivalence() -> Outcome {
    let base = scenario_with(|c| {
        c.waveform.sample_interval_s = 0.1e-6;
        c.grid.y_max = 3740.0;
    });
    let m = base.model.samples();
    if m > 64 {
        return Outcome { pass: false, detail: format!("scene has M = {m} > 64") };
    }
    let mut worst: f64 = 0.0;
    let mut argmax_agree = 0;
    for j in 0..50u64 {
        let covs: Vec<_> = (0..base.model.n_rx()).map(|p| random_hpd(m, 100 * j + p as u64)).collect();
        let inv: Vec<_> = covs.iter().map(|c| c.clone().try_inverse().unwrap()).collect();
        let model = RadarModel::with_window(
            base.model.layout.clone(),
            PhaseCodeBank::generate(base.model.n_tx(), base.model.waveform.chips, 1000 + j).unwrap(),
            base.model.waveform,
            base.model.window,
            NoiseModel::custom(covs).unwrap(),
        )
        .unwrap();
        let bank = CandidateBank::new(&model, &base.grid, 1e-10);
        let truth = base.grid.points()[(j as usize * 7) % base.grid.len()];
        let t = target(&model, truth, 3.0 + (j % 5) as f64, 77 + j);
        let r = synthesize(&model, &[t], 500 + j);
        let y = whiten_measurements(&model, &r);
        let state = DetectionState::new(&model, &base.grid);
        let params = GicParams { eta: 0.0, k_max: 1, ..GicParams::default() };
        let scores: Vec<Option<f64>> = (0..base.grid.len()).map(|i| Some(gic_score(&state, &params, &bank, &y, i))).collect();
        let oracle: Vec<Option<f64>> =
            base.grid.points().iter().map(|x| Some(brute_force_glrt(&model, &inv, &r.vectors, x))).collect();
        for (a, b) in scores.iter().zip(&oracle) {
            let (a, b) = (a.unwrap(), b.unwrap());
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
        argmax_agree += usize::from(argmax(&scores).map(|v| v.0) == argmax(&oracle).map(|v| v.0));
    }
    Outcome {
        pass: worst <= 1e-8 && argmax_agree == 50,
        detail: format!("50 scenes, M = {m}, worst relative error {worst:.2e}, argmax agreement {argmax_agree}/50"),
    }
}

struct Calibrated {
    gic: CalibrationResult,
    mf: CalibrationResult,
}

fn calibrate_desk(s: &Scenario) -> Calibrated {
    let c = &s.config.calibration;
    let params = s.config.detector_params(0.0);
    let gic = calibrate_eta(&s.model, &s.candidates, &s.grid, &params, PFA, c.trials, c.validation_trials, s.config.seed).unwrap();
    let mf = calibrate_mf_threshold(&s.model, &s.candidates, &s.grid, PFA, c.trials, c.validation_trials, s.config.seed).unwrap();
    Calibrated { gic, mf }
}

fn calibration_outcome(c: &Calibrated) -> Outcome {
    let g = &c.gic;
    Outcome {
        pass: g.validation_trials >= 2000 && (g.achieved_pfa - PFA).abs() <= PFA_TOL,
        detail: format!(
            "eta {:.4}, validation P_fa {:.4} on {} fresh trials, target {PFA} +/- {PFA_TOL}",
            g.eta, g.achieved_pfa, g.validation_trials
        ),
    }
}

fn single_target(desk: &Scenario, cal: &Calibrated, records: &mut Vec<TrialRecord>) -> Outcome {
    let mut cfg = desk.config.clone();
    cfg.targets = vec![TargetConfig { position: Point::new(4000.0, 3650.0), snr_db: 20.0 }];
    let s = Scenario::build(cfg, Path::new(".")).unwrap();
    let mut spec = ExperimentSpec::from_scenario(&s, DetectorKind::Msdis, cal.gic.eta, cal.mf.eta);
    spec.trials = 200;
    let recs = run_point(&s, &spec, 20.0).unwrap();
    let row = MetricsRow::from_records(20.0, &recs, 0.0);
    let off_grid = recs.iter().filter(|r| r.toi_error_m.is_some_and(|e| e != 0.0)).count();
    records.extend(recs);
    Outcome {
        pass: row.pd >= 0.95 && off_grid == 0 && row.rmse_m == 0.0,
        detail: format!("P_d {:.3} (>= 0.95), RMSE {} m, {off_grid} estimates off the true point", row.pd, row.rmse_m),
    }
}

fn pd_at(desk: &Scenario, cal: &Calibrated, kind: DetectorKind, records: &mut Vec<TrialRecord>) -> MetricsRow {
    let spec = ExperimentSpec::from_scenario(desk, kind, cal.gic.eta, cal.mf.eta);
    let start = Instant::now();
    let recs = run_point(desk, &spec, OPERATING_SNR_DB).unwrap();
    let row = MetricsRow::from_records(OPERATING_SNR_DB, &recs, start.elapsed().as_secs_f64());
    records.extend(recs);
    row
}

fn residual_fraction(model: &RadarModel, state: &DetectionState, x: &Point, gains: &[DVector<Complex64>]) -> f64 {
    (0..model.n_rx())
        .map(|p| {
            let echo = model.whitened_mode(p, x) * &gains[p];
            state.interference[p].reject_vector(&echo).norm_squared() / echo.norm_squared()
        })
        .sum::<f64>()
        / model.n_rx() as f64
}

fn mitigation_effectiveness(desk: &Scenario, cal: &Calibrated) -> Outcome {
    let x2 = Point::new(4010.0, 3860.0);
    let snr = 30.0;
    let trials = 20u64;
    let params = desk.config.detector_params(cal.gic.eta);
    let plain = GicParams { mitigation: false, ..params.clone() };
    let (mut with, mut without) = (0.0, 0.0);
    for j in 0..trials {
        let t = target(&desk.model, x2, snr, 9000 + j);
        let y = whiten_measurements(&desk.model, &synthesize(&desk.model, std::slice::from_ref(&t), 9100 + j));
        let state = DetectionState::new(&desk.model, &desk.grid);
        let out = detect_iteration(&state, &params, &desk.candidates, &y).unwrap();
        if !out.accepted {
            return Outcome { pass: false, detail: format!("trial {j}: off-grid target not detected") };
        }
        let (g, _) = estimate_gains(&state, &desk.candidates, &y, out.grid_index);
        let mut a = state.clone();
        update_interference(&mut a, &params, &desk.model, &desk.candidates, Some(&desk.fine_grid), out.grid_index, &g);
        with += residual_fraction(&desk.model, &a, &x2, &t.gains);
        let mut b = state;
        update_interference(&mut b, &plain, &desk.model, &desk.candidates, None, out.grid_index, &g);
        without += residual_fraction(&desk.model, &b, &x2, &t.gains);
    }
    with /= trials as f64;
    without /= trials as f64;
    Outcome {
        pass: with <= RESIDUAL_LIMIT && without > RESIDUAL_LIMIT,
        detail: format!(
            "target at ({}, {}) {snr} dB, {trials} seeds: residual {with:.4} with mitigation (<= {RESIDUAL_LIMIT}), {without:.4} plain (> {RESIDUAL_LIMIT})",
            x2.x, x2.y
        ),
    }
}

fn pruning_soundness(desk: &Scenario, records: &[TrialRecord]) -> Outcome {
    let violations: usize = records
        .iter()
        .map(|r| {
            let pts: Vec<Point> = r.reported.iter().map(|t| Point::new(t.x, t.y)).collect();
            pruning_violations(&desk.model.layout, &pts, desk.model.bandwidth()).len()
        })
        .sum();
    let multi = records.iter().filter(|r| r.reported.len() > 1).count();
    Outcome {
        pass: violations == 0 && !records.is_empty(),
        detail: format!("{} trial records ({multi} with several reports), {violations} violating pairs", records.len()),
    }
}

fn sweep_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    std::fs::write(dir.path().join("scene.toml"), SMALL).unwrap();
    let run = |args: &[&str]| Command::new(env!("CARGO_BIN_EXE_msdis")).args(args).env("RUST_LOG", "warn").status().unwrap().success();
    if !run(&["calibrate", "--config", &p("scene.toml"), "--out", &p("cal.json")]) {
        return Outcome { pass: false, detail: "calibrate failed".into() };
    }
    for out in ["a", "b"] {
        if !run(&["sweep", "--config", &p("scene.toml"), "--eta", &p("cal.json"), "--out", &p(out)]) {
            return Outcome { pass: false, detail: "sweep failed".into() };
        }
    }
    let mut same = 0;
    let names = ["msdis", "jdl-sic", "glrt-cd"];
    for d in names {
        let a = std::fs::read(dir.path().join(format!("a/{d}.csv"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b/{d}.csv"))).unwrap();
        same += usize::from(a == b && !a.is_empty());
    }
    Outcome { pass: same == names.len(), detail: format!("{same}/{} detector CSVs byte-identical across two runs", names.len()) }
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut ok = true;
    ok &= report(1, "projector algebra", minutes(1), projector_algebra);
    ok &= report(2, "oracle equivalence", minutes(1), oracle_equivalence);

    let desk = desk_scenario();
    let mut cal = None;
    ok &= report(3, "false-alarm calibration", minutes(5), || {
        let c = calibrate_desk(&desk);
        let out = calibration_outcome(&c);
        cal = Some(c);
        out
    });
    let cal = cal.unwrap();
    println!("  MF threshold {:.4} (validation P_fa {:.4})", cal.mf.eta, cal.mf.achieved_pfa);

    let mut records = Vec::new();
    ok &= report(4, "single-target sanity", minutes(5), || single_target(&desk, &cal, &mut records));

    let mut rows = None;
    ok &= report(5, "close to single-target benchmark", minutes(15), || {
        let glrt = pd_at(&desk, &cal, DetectorKind::GlrtCd, &mut records);
        let msdis = pd_at(&desk, &cal, DetectorKind::Msdis, &mut records);
        let gap = (msdis.pd - glrt.pd).abs();
        let out = Outcome {
            pass: gap <= CLOSE_TO_BENCHMARK,
            detail: format!(
                "SNR1 {OPERATING_SNR_DB} dB, {} trials: MSD-IS {:.3} +/- {:.3}, GLRT-CD {:.3} +/- {:.3}, gap {gap:.3} (<= {CLOSE_TO_BENCHMARK})",
                desk.config.experiment.trials, msdis.pd, msdis.pd_halfwidth, glrt.pd, glrt.pd_halfwidth
            ),
        };
        rows = Some(msdis);
        out
    });
    let msdis = rows.unwrap();
    ok &= report(6, "advantage over MF+SIC", minutes(15), || {
        let sic = pd_at(&desk, &cal, DetectorKind::JdlSic, &mut records);
        let margin = msdis.pd - sic.pd;
        Outcome {
            pass: margin >= SIC_MARGIN,
            detail: format!(
                "MSD-IS {:.3}, JDL-SIC {:.3} +/- {:.3}, margin {margin:.3} (>= {SIC_MARGIN})",
                msdis.pd, sic.pd, sic.pd_halfwidth
            ),
        }
    });
    ok &= report(7, "off-grid mitigation", minutes(5), || mitigation_effectiveness(&desk, &cal));
    ok &= report(8, "grid-update soundness", minutes(1), || pruning_soundness(&desk, &records));
    ok &= report(9, "sweep determinism", minutes(5), sweep_determinism);

    println!("acceptance: {}", if ok { "all criteria PASS" } else { "at least one criterion FAILED" });
    if !ok {
        std::process::exit(1);
    }
}
