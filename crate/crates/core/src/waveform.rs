//! Four-phase coded pulse trains, rectangular low-pass filtering and exact
//! sampling of delayed, filtered echo signatures.
//!
//! The transmitted signal of transmitter `n` is a train of `L` unit-amplitude
//! rectangular chips of length `T/L` weighted by four-phase symbols. The
//! receive filter is a unit-energy rectangle of length `T_phi`. Their
//! convolution is continuous and piecewise linear, so it is evaluated in
//! closed form from the running integral of the chip train.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, RadarLayout};

/// Timing and bandwidth parameters of the waveforms and the receiver chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveformConfig {
    /// Pulse duration T (s).
    pub duration_s: f64,
    /// Code length L (chips).
    pub chips: usize,
    /// Two-sided bandwidth W (Hz).
    pub bandwidth_hz: f64,
    /// Sampling interval T_s (s).
    pub sample_interval_s: f64,
    /// Filter support T_phi (s); defaults to one chip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_support_s: Option<f64>,
}

impl WaveformConfig {
    pub fn validate(&self, n_tx: usize) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.duration_s)
            || !positive(self.bandwidth_hz)
            || !positive(self.sample_interval_s)
            || !positive(self.filter_support())
            || self.chips == 0
        {
            return Err(Error::Config(format!("non-positive waveform parameter in {self:?}")));
        }
        if self.bandwidth_hz * self.duration_s < 4.0 * n_tx as f64 {
            log::warn!(
                "time-bandwidth product {} is small for {} transmitters",
                self.bandwidth_hz * self.duration_s,
                n_tx
            );
        }
        Ok(())
    }

    pub fn chip_duration(&self) -> f64 {
        self.duration_s / self.chips as f64
    }

    pub fn filter_support(&self) -> f64 {
        self.filter_support_s.unwrap_or_else(|| self.chip_duration())
    }

    /// Support length of every filtered waveform, `T + T_phi`.
    pub fn filtered_support(&self) -> f64 {
        self.duration_s + self.filter_support()
    }
}

/// Four-phase code sequences, one per transmitter.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseCodeBank {
    codes: Vec<Vec<Complex64>>,
    seed: u64,
    // running sums of the chips, prefix[n][l] = sum of chips 0..l
    prefix: Vec<Vec<Complex64>>,
}

const FOUR_PHASE: [Complex64; 4] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(-1.0, 0.0),
    Complex64::new(0.0, -1.0),
];

impl PhaseCodeBank {
    /// `n_tx` independent codes of `chips` symbols drawn uniformly from
    /// `{1, i, -1, -i}`.
    pub fn generate(n_tx: usize, chips: usize, seed: u64) -> Result<Self> {
        if n_tx == 0 || chips == 0 {
            return Err(Error::Usage("code bank needs N >= 1 and L >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = (0..n_tx)
            .map(|_| (0..chips).map(|_| FOUR_PHASE[rng.random_range(0..4)]).collect())
            .collect();
        Ok(Self::from_codes(codes, seed))
    }

    /// Bank from explicit chip sequences (all of equal length).
    pub fn from_codes(codes: Vec<Vec<Complex64>>, seed: u64) -> Self {
        let prefix = codes
            .iter()
            .map(|c| {
                let mut acc = Complex64::new(0.0, 0.0);
                let mut p = Vec::with_capacity(c.len() + 1);
                p.push(acc);
                for b in c {
                    acc += b;
                    p.push(acc);
                }
                p
            })
            .collect();
        Self { codes, seed, prefix }
    }

    pub fn codes(&self) -> &[Vec<Complex64>] {
        &self.codes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_tx(&self) -> usize {
        self.codes.len()
    }

    pub fn chips(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }

    /// Integral of the unfiltered chip train of transmitter `n` over `[0, t]`.
    fn running_integral(&self, n: usize, chip: f64, t: f64) -> Complex64 {
        let l = self.codes[n].len();
        if t <= 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let span = chip * l as f64;
        if t >= span {
            return self.prefix[n][l] * chip;
        }
        let j = ((t / chip).floor() as usize).min(l - 1);
        self.prefix[n][j] * chip + self.codes[n][j] * (t - j as f64 * chip)
    }

    /// Exact value of the filtered waveform `s_n(t)`; zero outside `[0, T + T_phi]`.
    pub fn filtered_value(&self, config: &WaveformConfig, n: usize, t: f64) -> Complex64 {
        let support = config.filter_support();
        if t <= 0.0 || t >= config.duration_s + support {
            return Complex64::new(0.0, 0.0);
        }
        let chip = config.chip_duration();
        (self.running_integral(n, chip, t) - self.running_integral(n, chip, t - support))
            / support.sqrt()
    }

    /// Exact energy `integral |s_n(t)|^2 dt`, integrating the piecewise-linear
    /// waveform segment by segment.
    pub fn filtered_energy(&self, config: &WaveformConfig, n: usize) -> f64 {
        let chip = config.chip_duration();
        let support = config.filter_support();
        let mut knots: Vec<f64> = (0..=self.chips())
            .flat_map(|k| [k as f64 * chip, k as f64 * chip + support])
            .collect();
        knots.sort_by(f64::total_cmp);
        knots.dedup_by(|a, b| (*a - *b).abs() < 1e-15 * chip);
        knots
            .windows(2)
            .map(|w| {
                let h = w[1] - w[0];
                let a = self.filtered_value(config, n, w[0]);
                let b = self.filtered_value(config, n, w[1]);
                h * (a.norm_sqr() + (a * b.conj()).re + b.norm_sqr()) / 3.0
            })
            .sum()
    }
}

/// Free-function form of [`PhaseCodeBank::generate`].
pub fn generate_codes(n_tx: usize, chips: usize, seed: u64) -> Result<PhaseCodeBank> {
    PhaseCodeBank::generate(n_tx, chips, seed)
}

/// Free-function form of [`PhaseCodeBank::filtered_value`].
pub fn filtered_waveform_value(
    bank: &PhaseCodeBank,
    config: &WaveformConfig,
    n: usize,
    t: f64,
) -> Complex64 {
    bank.filtered_value(config, n, t)
}

/// The sampling window shared by all receivers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub tau_min: f64,
    pub tau_max: f64,
    pub samples: usize,
    pub sample_interval: f64,
}

impl SampleWindow {
    /// `M = ceil((T + T_phi + tau_max - tau_min) / T_s)`.
    pub fn new(config: &WaveformConfig, tau_min: f64, tau_max: f64) -> Self {
        let span = config.filtered_support() + tau_max - tau_min;
        let ratio = span / config.sample_interval_s;
        // absorb rounding noise in ratios that are nominally integers
        let samples = (ratio - 1e-9 * ratio.max(1.0)).ceil().max(1.0) as usize;
        Self { tau_min, tau_max, samples, sample_interval: config.sample_interval_s }
    }

    pub fn sample_time(&self, m: usize) -> f64 {
        m as f64 * self.sample_interval + self.tau_min
    }
}

/// Samples `s_n((m-1) T_s + tau_min - tau_pn(x))`, `m = 1..M`.
pub fn signature_vector(
    bank: &PhaseCodeBank,
    config: &WaveformConfig,
    layout: &RadarLayout,
    p: usize,
    n: usize,
    x: &Point,
    window: &SampleWindow,
) -> DVector<Complex64> {
    let delay = layout.delay(p, n, x);
    delayed_samples(bank, config, n, delay, window)
}

pub(crate) fn delayed_samples(
    bank: &PhaseCodeBank,
    config: &WaveformConfig,
    n: usize,
    delay: f64,
    window: &SampleWindow,
) -> DVector<Complex64> {
    let offset = window.tau_min - delay;
    DVector::from_iterator(
        window.samples,
        (0..window.samples)
            .map(|m| bank.filtered_value(config, n, m as f64 * window.sample_interval + offset)),
    )
}

/// Mode matrix of one receiver for one candidate location.
#[derive(Clone, Debug, PartialEq)]
pub struct SignatureMatrix {
    pub entries: DMatrix<Complex64>,
    pub location: Point,
}

impl SignatureMatrix {
    pub fn samples(&self) -> usize {
        self.entries.nrows()
    }
}

/// Stacks the signatures of all transmitters seen by receiver `p` for a
/// target at `x`: an `M x N` matrix.
pub fn mode_matrix(
    bank: &PhaseCodeBank,
    config: &WaveformConfig,
    layout: &RadarLayout,
    p: usize,
    x: &Point,
    window: &SampleWindow,
) -> SignatureMatrix {
    let cols: Vec<_> = (0..layout.n_tx())
        .map(|n| signature_vector(bank, config, layout, p, n, x, window))
        .collect();
    SignatureMatrix { entries: DMatrix::from_columns(&cols), location: *x }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SPEED_OF_LIGHT;

    fn cfg(chips: usize) -> WaveformConfig {
        WaveformConfig {
            duration_s: chips as f64 * 1e-7,
            chips,
            bandwidth_hz: 1e7,
            sample_interval_s: 5e-8,
            filter_support_s: None,
        }
    }

    #[test]
    fn chips_are_four_phase() {
        let bank = generate_codes(3, 64, 5).unwrap();
        for code in bank.codes() {
            for b in code {
                assert!((b.norm() - 1.0).abs() < 1e-15);
                assert!(FOUR_PHASE.contains(b));
            }
        }
    }

    #[test]
    fn same_seed_same_bank() {
        assert_eq!(generate_codes(2, 32, 9).unwrap(), generate_codes(2, 32, 9).unwrap());
        assert_ne!(generate_codes(2, 32, 9).unwrap(), generate_codes(2, 32, 10).unwrap());
    }

    #[test]
    fn phase_histogram_is_uniform() {
        let bank = generate_codes(1, 4096, 1234).unwrap();
        let mut counts = [0usize; 4];
        for b in &bank.codes()[0] {
            counts[FOUR_PHASE.iter().position(|s| s == b).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / 4096.0;
            assert!((f - 0.25).abs() <= 0.03, "bin frequency {f}");
        }
    }

    #[test]
    fn filtered_value_edges() {
        let c = cfg(8);
        let bank = generate_codes(1, 8, 1).unwrap();
        assert_eq!(bank.filtered_value(&c, 0, 0.0), Complex64::new(0.0, 0.0));
        assert_eq!(bank.filtered_value(&c, 0, c.filtered_support() + 1e-9), Complex64::new(0.0, 0.0));
        assert_eq!(bank.filtered_value(&c, 0, -1e-6), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn full_overlap_equals_chip_times_root_chip_length() {
        // rect(T_c) * (1/sqrt(T_c)) rect(T_c) evaluated at the end of chip l
        // integrates exactly chip l: b_l * T_c / sqrt(T_c) = b_l * sqrt(T_c)
        let c = cfg(16);
        let bank = generate_codes(2, 16, 3).unwrap();
        let tc = c.chip_duration();
        for n in 0..2 {
            for l in 0..16 {
                let v = bank.filtered_value(&c, n, (l + 1) as f64 * tc);
                let want = bank.codes()[n][l] * tc.sqrt();
                assert!((v - want).norm() < 1e-12 * tc.sqrt());
            }
        }
    }

    #[test]
    fn flat_between_equal_chips() {
        let codes = vec![vec![Complex64::new(0.0, 1.0); 4]];
        let bank = PhaseCodeBank::from_codes(codes, 0);
        let c = cfg(4);
        let tc = c.chip_duration();
        for frac in [1.1, 1.5, 2.3, 3.9] {
            let v = bank.filtered_value(&c, 0, frac * tc);
            assert!((v - Complex64::new(0.0, tc.sqrt())).norm() < 1e-12 * tc.sqrt());
        }
    }

    #[test]
    fn filtered_value_is_lipschitz() {
        let c = cfg(32);
        let bank = generate_codes(1, 32, 77).unwrap();
        let bound = 2.0 * (c.chips as f64 / c.duration_s).sqrt();
        let dt = c.filtered_support() / 20_000.0;
        let mut prev = bank.filtered_value(&c, 0, -dt);
        for k in 0..20_100 {
            let t = k as f64 * dt;
            let v = bank.filtered_value(&c, 0, t);
            assert!((v - prev).norm() / dt <= bound * (1.0 + 1e-9));
            prev = v;
        }
    }

    #[test]
    fn sampled_energy_matches_analytic() {
        // Riemann sums of |s|^2 converge at O(T_s^2); at two samples per chip
        // the bias for random four-phase codes is about +12.5 %, so the
        // comparison uses twenty samples per chip.
        let c = WaveformConfig { sample_interval_s: 5e-9, ..cfg(32) };
        let bank = generate_codes(2, 32, 21).unwrap();
        let window = SampleWindow::new(&c, 0.0, 0.0);
        for n in 0..2 {
            let v = delayed_samples(&bank, &c, n, 0.0, &window);
            let sampled = v.norm_squared() * c.sample_interval_s;
            let exact = bank.filtered_energy(&c, n);
            assert!((sampled - exact).abs() <= 0.02 * exact, "{sampled} vs {exact}");
        }
    }

    #[test]
    fn filtered_energy_constant_code() {
        // rect(T) * rect(T_c)/sqrt(T_c): trapezoid with two ramps of length
        // T_c and a flat top of length T - T_c at height sqrt(T_c);
        // energy = T_c (T - T_c) + 2 * T_c * T_c / 3
        let c = cfg(10);
        let bank = PhaseCodeBank::from_codes(vec![vec![Complex64::new(1.0, 0.0); 10]], 0);
        let (t, tc) = (c.duration_s, c.chip_duration());
        let want = tc * (t - tc) + 2.0 * tc * tc / 3.0;
        assert!((bank.filtered_energy(&c, 0) - want).abs() < 1e-12 * want);
    }

    fn pair_layout() -> RadarLayout {
        RadarLayout::new(
            vec![Point::new(0.0, 0.0), Point::new(0.0, 0.0)],
            vec![Point::new(0.0, 0.0)],
            SPEED_OF_LIGHT,
        )
        .unwrap()
    }

    #[test]
    fn aligned_signature_is_on_grid_sampling() {
        let c = cfg(16);
        let bank = generate_codes(2, 16, 2).unwrap();
        let layout = pair_layout();
        let x = Point::new(1500.0, 0.0);
        let tau = layout.bistatic_delay(0, 0, &x).unwrap();
        let window = SampleWindow::new(&c, tau, tau + 1e-6);
        let v = signature_vector(&bank, &c, &layout, 0, 0, &x, &window);
        for m in 0..window.samples {
            let want = bank.filtered_value(&c, 0, m as f64 * c.sample_interval_s);
            assert!((v[m] - want).norm() < 1e-9 * c.chip_duration().sqrt());
        }
        // outside support: exact zeros
        let last_live = (c.filtered_support() / c.sample_interval_s).ceil() as usize;
        for m in last_live..window.samples {
            assert_eq!(v[m], Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn one_sample_delay_shifts_vector() {
        let c = cfg(16);
        let bank = generate_codes(1, 16, 4).unwrap();
        let window = SampleWindow::new(&c, 1e-5, 1e-5 + 5e-7);
        let a = delayed_samples(&bank, &c, 0, 1e-5 + 1.3e-8, &window);
        let b = delayed_samples(&bank, &c, 0, 1e-5 + 1.3e-8 + c.sample_interval_s, &window);
        for m in 1..window.samples {
            assert!((b[m] - a[m - 1]).norm() < 1e-9 * c.chip_duration().sqrt());
        }
    }

    #[test]
    fn time_invariance_of_window() {
        let c = cfg(16);
        let bank = generate_codes(1, 16, 4).unwrap();
        let w1 = SampleWindow::new(&c, 2e-5, 2.1e-5);
        let w2 = SampleWindow { tau_min: 2e-5 + 3.7e-7, ..w1 };
        let a = delayed_samples(&bank, &c, 0, 2.02e-5, &w1);
        let b = delayed_samples(&bank, &c, 0, 2.02e-5 + 3.7e-7, &w2);
        assert!((a - b).norm() < 1e-9 * c.chip_duration().sqrt());
    }

    #[test]
    fn mode_matrix_shapes_and_symmetry() {
        let c = cfg(16);
        let code = generate_codes(1, 16, 8).unwrap().codes()[0].clone();
        let bank = PhaseCodeBank::from_codes(vec![code.clone(), code], 0);
        let layout = pair_layout();
        let x = Point::new(700.0, 200.0);
        let tau = layout.bistatic_delay(0, 0, &x).unwrap();
        let window = SampleWindow::new(&c, tau - 1e-7, tau + 2e-7);
        let s = mode_matrix(&bank, &c, &layout, 0, &x, &window);
        assert_eq!(s.entries.shape(), (window.samples, 2));
        assert_eq!(s.entries.column(0), s.entries.column(1));

        let single = RadarLayout::new(vec![Point::new(0.0, 0.0)], vec![Point::new(0.0, 0.0)], SPEED_OF_LIGHT)
            .unwrap();
        let s1 = mode_matrix(&bank, &c, &single, 0, &x, &window);
        assert_eq!(s1.entries.ncols(), 1);
        assert_eq!(s1.entries.column(0), signature_vector(&bank, &c, &single, 0, 0, &x, &window));
    }

    #[test]
    fn sample_count_arithmetic() {
        // T = 6.4 us, T_s = 0.05 us, T_phi = 0.1 us, window spread 1.2 us:
        // (6.4 + 0.1 + 1.2) / 0.05 = 154 exactly
        let c = WaveformConfig {
            duration_s: 6.4e-6,
            chips: 64,
            bandwidth_hz: 1e7,
            sample_interval_s: 5e-8,
            filter_support_s: None,
        };
        let w = SampleWindow::new(&c, 3.0e-5, 3.12e-5);
        assert_eq!(w.samples, 154);
        let w = SampleWindow::new(&c, 3.0e-5, 3.1201e-5);
        assert_eq!(w.samples, 155);
    }
}
