//! Measurement synthesis: target echoes with SNR-controlled gains plus
//! complex circular Gaussian noise of arbitrary full-rank covariance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{Point, RadarLayout, SearchGrid};
use crate::subspace::Whitener;
use crate::waveform::{mode_matrix, signature_vector, PhaseCodeBank, SampleWindow, WaveformConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseKind {
    White { sigma2: f64 },
    Custom,
}

/// Per-receiver noise covariances `C_p`, independent across receivers.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    covariances: Vec<DMatrix<Complex64>>,
}

impl NoiseModel {
    pub fn white(receivers: usize, samples: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Config(format!("noise power must be positive, got {sigma2}")));
        }
        let c = DMatrix::identity(samples, samples).scale(sigma2);
        Ok(Self { kind: NoiseKind::White { sigma2 }, covariances: vec![c; receivers] })
    }

    /// Arbitrary covariances; each must be Hermitian within 1e-12 relative.
    pub fn custom(covariances: Vec<DMatrix<Complex64>>) -> Result<Self> {
        for (p, c) in covariances.iter().enumerate() {
            if !c.is_square() {
                return Err(Error::Config(format!("covariance {p} is not square")));
            }
            if (c - c.adjoint()).norm() > 1e-12 * c.norm() {
                return Err(Error::SingularCovariance(format!("covariance {p} is not Hermitian")));
            }
        }
        Ok(Self { kind: NoiseKind::Custom, covariances })
    }

    pub fn covariances(&self) -> &[DMatrix<Complex64>] {
        &self.covariances
    }

    /// `trace(C_p) / M`, the average per-sample noise power of receiver `p`.
    pub fn mean_power(&self, p: usize) -> f64 {
        let c = &self.covariances[p];
        c.trace().re / c.nrows() as f64
    }
}

/// Everything fixed across trials: geometry, codes, sampling window and
/// noise statistics, with the whitening and colouring factors precomputed.
#[derive(Clone, Debug)]
pub struct RadarModel {
    pub layout: RadarLayout,
    pub bank: PhaseCodeBank,
    pub waveform: WaveformConfig,
    pub window: SampleWindow,
    pub noise: NoiseModel,
    whiteners: Vec<Whitener>,
    colouring: Vec<DMatrix<Complex64>>,
}

impl RadarModel {
    /// The sampling window is derived from the delay extent of `grid`.
    pub fn new(
        layout: RadarLayout,
        bank: PhaseCodeBank,
        waveform: WaveformConfig,
        grid: &SearchGrid,
        noise: NoiseModel,
    ) -> Result<Self> {
        let (lo, hi) = layout.delay_window(grid)?;
        let window = SampleWindow::new(&waveform, lo, hi);
        Self::with_window(layout, bank, waveform, window, noise)
    }

    pub fn with_window(
        layout: RadarLayout,
        bank: PhaseCodeBank,
        waveform: WaveformConfig,
        window: SampleWindow,
        noise: NoiseModel,
    ) -> Result<Self> {
        waveform.validate(layout.n_tx())?;
        if bank.n_tx() != layout.n_tx() {
            return Err(Error::Config(format!(
                "{} codes for {} transmitters",
                bank.n_tx(),
                layout.n_tx()
            )));
        }
        if bank.chips() != waveform.chips {
            return Err(Error::Config("code length differs from the waveform chip count".into()));
        }
        if noise.covariances.len() != layout.n_rx() {
            return Err(Error::Config(format!(
                "{} noise covariances for {} receivers",
                noise.covariances.len(),
                layout.n_rx()
            )));
        }
        let mut whiteners = Vec::with_capacity(layout.n_rx());
        let mut colouring = Vec::with_capacity(layout.n_rx());
        for c in &noise.covariances {
            if c.nrows() != window.samples {
                return Err(Error::Config(format!(
                    "covariance is {}x{} but the window has {} samples",
                    c.nrows(),
                    c.ncols(),
                    window.samples
                )));
            }
            whiteners.push(Whitener::from_covariance(c)?);
            let chol = c.clone().cholesky().ok_or_else(|| {
                Error::SingularCovariance("covariance has no Cholesky factor".into())
            })?;
            colouring.push(chol.unpack());
        }
        Ok(Self { layout, bank, waveform, window, noise, whiteners, colouring })
    }

    pub fn n_tx(&self) -> usize {
        self.layout.n_tx()
    }

    pub fn n_rx(&self) -> usize {
        self.layout.n_rx()
    }

    pub fn samples(&self) -> usize {
        self.window.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.waveform.bandwidth_hz
    }

    /// Range resolution `c / W` in meters.
    pub fn resolution_m(&self) -> f64 {
        self.layout.speed() / self.waveform.bandwidth_hz
    }

    pub fn whitener(&self, p: usize) -> &Whitener {
        &self.whiteners[p]
    }

    pub fn signature(&self, p: usize, n: usize, x: &Point) -> DVector<Complex64> {
        signature_vector(&self.bank, &self.waveform, &self.layout, p, n, x, &self.window)
    }

    pub fn mode(&self, p: usize, x: &Point) -> DMatrix<Complex64> {
        mode_matrix(&self.bank, &self.waveform, &self.layout, p, x, &self.window).entries
    }

    /// `C_p^{-1/2} S_p(x)`.
    pub fn whitened_mode(&self, p: usize, x: &Point) -> DMatrix<Complex64> {
        self.whiteners[p].whiten_matrix(&self.mode(p, x))
    }

    /// `||C_p^{-1/2} s_pn(x)||^2` for every (p, n), row p.
    pub fn whitened_energies(&self, x: &Point) -> Vec<Vec<f64>> {
        (0..self.n_rx())
            .map(|p| {
                let a = self.whitened_mode(p, x);
                a.column_iter().map(|c| c.norm_squared()).collect()
            })
            .collect()
    }
}

/// A simulated target with its per-receiver gain vectors `a_{p,k}` (length N).
#[derive(Clone, Debug, PartialEq)]
pub struct TruthTarget {
    pub location: Point,
    pub gains: Vec<DVector<Complex64>>,
    pub snr_db: f64,
}

impl TruthTarget {
    /// Draws random-phase gains scaled to `snr_db`.
    pub fn new(model: &RadarModel, location: Point, snr_db: f64, seed: u64) -> Result<Self> {
        let gains = amplitude_scale(model, &location, snr_db, seed)?;
        Ok(Self { location, gains, snr_db })
    }
}

/// Average whitened echo energy `(1/NP) sum_{p,n} |a_pn|^2 ||C_p^{-1/2} s_pn(x)||^2`.
fn mean_echo_energy(energies: &[Vec<f64>], gains: &[DVector<Complex64>]) -> f64 {
    let count = energies.iter().map(Vec::len).sum::<usize>() as f64;
    energies
        .iter()
        .zip(gains)
        .flat_map(|(e, a)| e.iter().zip(a.iter()).map(|(e, a)| e * a.norm_sqr()))
        .sum::<f64>()
        / count
}

/// Unit-modulus gains with i.i.d. uniform phases, then one common positive
/// scale so that the SNR of the target is exactly `snr_db`.
pub fn amplitude_scale(
    model: &RadarModel,
    location: &Point,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<DVector<Complex64>>> {
    let energies = model.whitened_energies(location);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit: Vec<DVector<Complex64>> = (0..model.n_rx())
        .map(|_| {
            DVector::from_iterator(
                model.n_tx(),
                (0..model.n_tx()).map(|_| {
                    let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                    Complex64::from_polar(1.0, phase)
                }),
            )
        })
        .collect();
    let base = mean_echo_energy(&energies, &unit);
    if !(base > 0.0) {
        return Err(Error::DegenerateScene(format!(
            "target at ({}, {}) produces no echo inside the sampling window",
            location.x, location.y
        )));
    }
    let scale = (10f64.powf(snr_db / 10.0) / base).sqrt();
    Ok(unit.into_iter().map(|a| a.scale(scale)).collect())
}

/// SNR in dB recomputed from stored gains; `-inf` for all-zero gains.
pub fn realized_snr(model: &RadarModel, location: &Point, gains: &[DVector<Complex64>]) -> f64 {
    let e = mean_echo_energy(&model.whitened_energies(location), gains);
    if e > 0.0 {
        10.0 * e.log10()
    } else {
        f64::NEG_INFINITY
    }
}

/// The `P` received sample vectors `r_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub vectors: Vec<DVector<Complex64>>,
    pub window: SampleWindow,
}

impl MeasurementSet {
    pub fn zeros(model: &RadarModel) -> Self {
        Self {
            vectors: vec![DVector::zeros(model.samples()); model.n_rx()],
            window: model.window,
        }
    }
}

/// Noise-free superposition `sum_k S_p(x_k) a_{p,k}`.
pub fn echoes(model: &RadarModel, targets: &[TruthTarget]) -> MeasurementSet {
    let mut out = MeasurementSet::zeros(model);
    for t in targets {
        for (p, r) in out.vectors.iter_mut().enumerate() {
            *r += model.mode(p, &t.location) * &t.gains[p];
        }
    }
    out
}

/// One draw of `w_p ~ CN(0, C_p)` for every receiver.
pub fn noise(model: &RadarModel, seed: u64) -> Vec<DVector<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = model.samples();
    let half = 0.5f64.sqrt();
    model
        .colouring
        .iter()
        .map(|l| {
            let z = DVector::from_iterator(
                m,
                (0..m).map(|_| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    Complex64::new(re * half, im * half)
                }),
            );
            match model.noise.kind {
                NoiseKind::White { sigma2 } => z.scale(sigma2.sqrt()),
                NoiseKind::Custom => l * z,
            }
        })
        .collect()
}

/// `r_p = sum_k S_p(x_k) a_{p,k} + w_p`, deterministic given `seed`.
pub fn synthesize(model: &RadarModel, targets: &[TruthTarget], seed: u64) -> MeasurementSet {
    for (i, a) in targets.iter().enumerate() {
        for b in &targets[i + 1..] {
            if !model.layout.are_separable(&a.location, &b.location, model.bandwidth()) {
                log::warn!(
                    "targets at ({}, {}) and ({}, {}) are not separable",
                    a.location.x,
                    a.location.y,
                    b.location.x,
                    b.location.y
                );
            }
        }
    }
    let mut out = echoes(model, targets);
    for (r, w) in out.vectors.iter_mut().zip(noise(model, seed)) {
        *r += w;
    }
    out
}
