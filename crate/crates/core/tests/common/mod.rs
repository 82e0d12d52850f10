#![allow(dead_code)]

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use msdis::config::{Scenario, ScenarioConfig};
use msdis::geometry::Point;
use msdis::scene::{MeasurementSet, RadarModel, TruthTarget};

/// A 5 x 10 grid scene with 16-chip codes and two on-grid targets 140 m
/// apart; fast enough for exhaustive checks.
pub const SMALL: &str = r#"
seed = 11

[layout]
tx = [[500.0, 1000.0], [7500.0, 0.0]]
rx = [[3000.0, 0.0], [6500.0, 1500.0]]

[waveform]
duration_s = 1.6e-6
chips = 16
bandwidth_hz = 10e6
sample_interval_s = 0.05e-6
code_seed = 5

[grid]
x_min = 3960.0
x_max = 4040.0
y_min = 3660.0
y_max = 3840.0
spacing_m = 20.0
fine_spacing_m = 0.05

[[targets]]
position = [4000.0, 3680.0]
snr_db = 10.0

[[targets]]
position = [4000.0, 3820.0]
snr_db = 16.020599913279625

[noise]
kind = "white"
sigma2 = 1.0

[detector]
k_max = 5
mitigation = true
epsilon = 1.0

[calibration]
target_pfa = 0.05
trials = 400
validation_trials = 400

[experiment]
snr_sweep = [4.0, 12.0]
trials = 20
sic_max_iterations = 5
"#;

pub fn small_config() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(SMALL).unwrap()
}

pub fn small_scenario() -> Scenario {
    Scenario::build(small_config(), Path::new(".")).unwrap()
}

pub fn scenario_with(edit: impl FnOnce(&mut ScenarioConfig)) -> Scenario {
    let mut cfg = small_config();
    edit(&mut cfg);
    Scenario::build(cfg, Path::new(".")).unwrap()
}

pub fn desk_scenario() -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/desk.toml")).unwrap()
}

/// Target with gains drawn for `snr_db`.
pub fn target(model: &RadarModel, x: Point, snr_db: f64, seed: u64) -> TruthTarget {
    TruthTarget::new(model, x, snr_db, seed).unwrap()
}

pub fn measurements(model: &RadarModel, vectors: Vec<DVector<Complex64>>) -> MeasurementSet {
    MeasurementSet { vectors, window: model.window }
}

/// `y^H A (A^H A)^{-1} A^H y` through the normal equations, independent of
/// the SVD-based projectors in the library.
pub fn brute_force_projection_energy(a: &DMatrix<Complex64>, y: &DVector<Complex64>) -> f64 {
    let gram = a.adjoint() * a;
    let rhs = a.adjoint() * y;
    let coef = gram.lu().solve(&rhs).expect("full column rank");
    (rhs.adjoint() * coef)[(0, 0)].re
}

pub fn random_hpd(m: usize, seed: u64) -> DMatrix<Complex64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(m, m, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    &b * b.adjoint() + DMatrix::identity(m, m).scale(0.5)
}

pub fn random_vector(m: usize, seed: u64) -> DVector<Complex64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(m, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}
