//! Scenario configuration (TOML) and construction of the runtime objects.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baselines::SicCancellation;
use crate::detector::{CandidateBank, GicParams, DEFAULT_BALL_CAP};
use crate::error::{Error, Result};
use crate::geometry::{Bounds, FineGrid, Point, RadarLayout, SearchGrid, SPEED_OF_LIGHT};
use crate::scene::{NoiseModel, RadarModel};
use crate::subspace::DEFAULT_RANK_TOL;
use crate::waveform::{PhaseCodeBank, SampleWindow, WaveformConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Master seed for scenes, calibration and sweeps.
    pub seed: u64,
    pub layout: LayoutConfig,
    pub waveform: WaveformSection,
    pub grid: GridConfig,
    #[serde(default)]
    pub targets: Vec<TargetConfig>,
    pub noise: NoiseConfig,
    pub detector: DetectorConfig,
    pub calibration: CalibrationConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub tx: Vec<Point>,
    pub rx: Vec<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_m_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveformSection {
    pub duration_s: f64,
    pub chips: usize,
    pub bandwidth_hz: f64,
    pub sample_interval_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_support_s: Option<f64>,
    pub code_seed: u64,
}

impl WaveformSection {
    pub fn timing(&self) -> WaveformConfig {
        WaveformConfig {
            duration_s: self.duration_s,
            chips: self.chips,
            bandwidth_hz: self.bandwidth_hz,
            sample_interval_s: self.sample_interval_s,
            filter_support_s: self.filter_support_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub spacing_m: f64,
    pub fine_spacing_m: f64,
}

impl GridConfig {
    pub fn bounds(&self) -> Bounds {
        Bounds { x_min: self.x_min, x_max: self.x_max, y_min: self.y_min, y_max: self.y_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub position: Point,
    pub snr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseConfig {
    White { sigma2: f64 },
    /// JSON file `{"receivers": [{"re": [[..]], "im": [[..]]}, ..]}`, path
    /// relative to the config file.
    Custom { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub k_max: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub mitigation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_cap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub target_pfa: f64,
    pub trials: usize,
    pub validation_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// SNR of the target of interest (dB); the other targets keep their
    /// configured offset from it.
    #[serde(default)]
    pub snr_sweep: Vec<f64>,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub association_radius_m: Option<f64>,
    #[serde(default)]
    pub target_of_interest: usize,
    pub sic_max_iterations: usize,
    #[serde(default)]
    pub sic_cancellation: SicCancellation,
}

#[derive(Deserialize)]
struct CovarianceFile {
    receivers: Vec<ComplexMatrixJson>,
}

#[derive(Deserialize)]
struct ComplexMatrixJson {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

impl ComplexMatrixJson {
    fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        let n = self.re.len();
        if self.im.len() != n || self.re.iter().chain(&self.im).any(|row| row.len() != n) {
            return Err(Error::Config("covariance entries must be square re/im arrays".into()));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| Complex64::new(self.re[i][j], self.im[i][j])))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("waveform.duration_s", self.waveform.duration_s)?;
        positive("waveform.bandwidth_hz", self.waveform.bandwidth_hz)?;
        positive("waveform.sample_interval_s", self.waveform.sample_interval_s)?;
        if let Some(v) = self.waveform.filter_support_s {
            positive("waveform.filter_support_s", v)?;
        }
        if let Some(v) = self.layout.speed_m_s {
            positive("layout.speed_m_s", v)?;
        }
        positive("grid.spacing_m", self.grid.spacing_m)?;
        positive("grid.fine_spacing_m", self.grid.fine_spacing_m)?;
        if self.waveform.chips == 0 {
            return Err(Error::Config("waveform.chips must be at least 1".into()));
        }
        if let NoiseConfig::White { sigma2 } = self.noise {
            positive("noise.sigma2", sigma2)?;
        }
        if self.detector.k_max == 0 {
            return Err(Error::Config("detector.k_max must be at least 1".into()));
        }
        if let Some(e) = self.detector.epsilon {
            positive("detector.epsilon", e)?;
        }
        let pfa = self.calibration.target_pfa;
        if !(pfa > 0.0 && pfa < 1.0) {
            return Err(Error::Config(format!("calibration.target_pfa must be in (0, 1), got {pfa}")));
        }
        if self.calibration.trials < 100 || self.calibration.validation_trials == 0 {
            return Err(Error::Config("calibration needs at least 100 trials".into()));
        }
        if self.experiment.trials == 0 || self.experiment.sic_max_iterations == 0 {
            return Err(Error::Config("experiment trials and SIC iterations must be >= 1".into()));
        }
        if let Some(r) = self.experiment.association_radius_m {
            positive("experiment.association_radius_m", r)?;
        }
        if !self.targets.is_empty() && self.experiment.target_of_interest >= self.targets.len() {
            return Err(Error::Config("experiment.target_of_interest out of range".into()));
        }
        Ok(())
    }

    pub fn speed(&self) -> f64 {
        self.layout.speed_m_s.unwrap_or(SPEED_OF_LIGHT)
    }

    pub fn detector_params(&self, eta: f64) -> GicParams {
        GicParams {
            eta,
            k_max: self.detector.k_max,
            epsilon: self.detector.epsilon,
            mitigation: self.detector.mitigation,
            rank_tol: self.detector.rank_tol.unwrap_or(DEFAULT_RANK_TOL),
            ball_cap: self.detector.ball_cap.unwrap_or(DEFAULT_BALL_CAP),
        }
    }

    /// Association radius, defaulting to one resolution cell `c / W`.
    pub fn association_radius(&self) -> f64 {
        self.experiment
            .association_radius_m
            .unwrap_or(self.speed() / self.waveform.bandwidth_hz)
    }
}

/// Everything a trial needs, built once from a config.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: RadarModel,
    pub grid: SearchGrid,
    pub fine_grid: FineGrid,
    pub candidates: CandidateBank,
}

impl Scenario {
    /// `base_dir` resolves relative file references (custom covariances).
    pub fn build(config: ScenarioConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let layout = RadarLayout::new(config.layout.tx.clone(), config.layout.rx.clone(), config.speed())?;
        let timing = config.waveform.timing();
        let bank = PhaseCodeBank::generate(layout.n_tx(), timing.chips, config.waveform.code_seed)?;
        let grid = SearchGrid::rectangular(config.grid.bounds(), config.grid.spacing_m)?;
        let fine_grid =
            FineGrid::new(config.grid.bounds(), config.grid.fine_spacing_m, config.grid.spacing_m)
                .map_err(|e| Error::Config(e.to_string()))?;
        let (lo, hi) = layout.delay_window(&grid)?;
        let window = SampleWindow::new(&timing, lo, hi);
        let noise = match &config.noise {
            NoiseConfig::White { sigma2 } => NoiseModel::white(layout.n_rx(), window.samples, *sigma2)?,
            NoiseConfig::Custom { path } => {
                let full = base_dir.join(path);
                let text = std::fs::read_to_string(&full)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", full.display())))?;
                let file: CovarianceFile = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", full.display())))?;
                let mats = file.receivers.iter().map(ComplexMatrixJson::to_matrix).collect::<Result<_>>()?;
                NoiseModel::custom(mats)?
            }
        };
        let model = RadarModel::with_window(layout, bank, timing, window, noise)?;
        let rank_tol = config.detector.rank_tol.unwrap_or(DEFAULT_RANK_TOL);
        let candidates = CandidateBank::new(&model, &grid, rank_tol);
        Ok(Self { config, model, grid, fine_grid, candidates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = ScenarioConfig::load(path)?;
        Self::build(cfg, path.parent().unwrap_or(Path::new(".")))
    }
}
