//! Transmitter, chromatic-dispersion fiber and square-law photodiode.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{apply_frequency_response, GridSpec, RealSignal, SampledSignal};

/// Speed of light used by the fiber model, m/s.
pub const LIGHT_SPEED: f64 = 3e8;

/// Pulse samples below this fraction of the peak are dropped.
pub const PULSE_TRUNCATION: f64 = 1e-8;

/// Field samples of the dispersed pulse below this fraction of its peak are dropped.
const FIELD_TRUNCATION: f64 = 1e-10;

/// Physical link parameters, all in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    /// Carrier wavelength in metres.
    pub wavelength: f64,
    /// Accumulated dispersion D·L in s/m (1 ps/nm = 1e-3 s/m).
    pub dispersion: f64,
    /// Gaussian envelope width T0 in seconds.
    pub pulse_width: f64,
    pub grid: GridSpec,
}

impl LinkConfig {
    /// Builds a configuration from the customary engineering units.
    pub fn from_units(
        wavelength_nm: f64,
        dispersion_ps_per_nm: f64,
        pulse_width_ps: f64,
        symbol_rate_ghz: f64,
        samples_per_symbol: usize,
    ) -> Result<Self> {
        if !(symbol_rate_ghz > 0.0) {
            return Err(Error::Config(format!(
                "symbol rate must be positive, got {symbol_rate_ghz} GHz"
            )));
        }
        let cfg = Self {
            wavelength: wavelength_nm * 1e-9,
            dispersion: dispersion_ps_per_nm * 1e-3,
            pulse_width: pulse_width_ps * 1e-12,
            grid: GridSpec::new(samples_per_symbol, 1.0 / (symbol_rate_ghz * 1e9))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0) {
            return Err(Error::Config("wavelength must be positive".into()));
        }
        if !(self.pulse_width > 0.0) {
            return Err(Error::Config("pulse width must be positive".into()));
        }
        if !(self.dispersion >= 0.0) {
            return Err(Error::Config("dispersion must be non-negative".into()));
        }
        GridSpec::new(self.grid.samples_per_symbol, self.grid.symbol_period)?;
        Ok(())
    }

    pub fn symbol_rate(&self) -> f64 {
        1.0 / self.grid.symbol_period
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.grid.samples_per_symbol
    }

    pub fn sample_period(&self) -> f64 {
        self.grid.sample_period()
    }

    /// Coefficient β of the quadratic phase `exp(−jβω²)`, in s².
    pub fn dispersion_coefficient(&self) -> f64 {
        self.wavelength * self.wavelength * self.dispersion / (4.0 * std::f64::consts::PI * LIGHT_SPEED)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Ook,
    Pam4,
}

/// Real, non-negative transmit alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub kind: Modulation,
    pub levels: Vec<f64>,
    pub bits_per_symbol: usize,
}

/// Gray code of PAM4 level index `i` (00, 01, 11, 10).
const PAM4_GRAY: [u8; 4] = [0b00, 0b01, 0b11, 0b10];

impl Constellation {
    pub fn new(kind: Modulation) -> Self {
        match kind {
            Modulation::Ook => Self {
                kind,
                levels: vec![0.0, 1.0],
                bits_per_symbol: 1,
            },
            Modulation::Pam4 => Self {
                kind,
                levels: vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
                bits_per_symbol: 2,
            },
        }
    }

    pub fn ook() -> Self {
        Self::new(Modulation::Ook)
    }

    pub fn pam4() -> Self {
        Self::new(Modulation::Pam4)
    }

    /// Alphabet size A.
    pub fn size(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, index: usize) -> f64 {
        self.levels[index]
    }

    /// Bit label of a symbol index (Gray-coded for PAM4).
    pub fn bits(&self, index: usize) -> u8 {
        match self.kind {
            Modulation::Ook => index as u8,
            Modulation::Pam4 => PAM4_GRAY[index],
        }
    }

    /// Symbol index carrying the given bit label.
    pub fn index_of_bits(&self, bits: u8) -> usize {
        match self.kind {
            Modulation::Ook => bits as usize,
            Modulation::Pam4 => PAM4_GRAY.iter().position(|&g| g == bits).expect("2-bit label"),
        }
    }

    /// Number of differing bits between two symbol indices.
    pub fn bit_errors(&self, a: usize, b: usize) -> u32 {
        (self.bits(a) ^ self.bits(b)).count_ones()
    }

    pub fn amplitudes(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.levels[i]).collect()
    }
}

/// Unchirped Gaussian envelope `exp(−t²/2T0²)` on the link grid.
///
/// The pulse is symmetric about t = 0 and truncated where it falls below
/// [`PULSE_TRUNCATION`] of its peak.
pub fn shape_pulse(cfg: &LinkConfig) -> RealSignal {
    let dt = cfg.sample_period();
    let t0 = cfg.pulse_width;
    let t_max = t0 * (2.0 * (1.0 / PULSE_TRUNCATION).ln()).sqrt();
    let half = (t_max / dt).floor() as i64;
    let samples = (-half..=half)
        .map(|i| {
            let t = i as f64 * dt;
            (-t * t / (2.0 * t0 * t0)).exp()
        })
        .collect();
    SampledSignal::new(samples, dt, -half).expect("valid grid")
}

/// The fiber's all-pass quadratic-phase response `O(ω) = exp(−j λ²DL/(4πC) ω²)`.
pub fn fiber_response(cfg: &LinkConfig) -> impl Fn(f64) -> Complex64 + Send + Sync {
    let beta = cfg.dispersion_coefficient();
    move |omega: f64| Complex64::from_polar(1.0, -beta * omega * omega)
}

/// Pulse after the fiber, `g = pulse ∗ o`.
pub fn dispersed_pulse(cfg: &LinkConfig) -> SampledSignal<Complex64> {
    let p = shape_pulse(cfg);
    // Group-delay spread over the band where the Gaussian spectrum is non-negligible.
    let dt = cfg.sample_period();
    let omega_max = (2.0 * (1.0 / PULSE_TRUNCATION).ln()).sqrt() / cfg.pulse_width;
    let spread = 2.0 * cfg.dispersion_coefficient() * omega_max;
    let extra = (spread / dt).ceil() as usize + p.len();
    let g = apply_frequency_response(&p, fiber_response(cfg), extra).expect("non-empty pulse");
    g.trimmed(FIELD_TRUNCATION)
}

/// Optical field `Σ a_k g(t − kT)` for the given symbol amplitudes.
pub fn propagate(symbols: &[f64], cfg: &LinkConfig) -> SampledSignal<Complex64> {
    propagate_with(symbols, &dispersed_pulse(cfg), cfg.samples_per_symbol())
}

/// [`propagate`] with a precomputed dispersed pulse.
pub fn propagate_with(
    symbols: &[f64],
    pulse: &SampledSignal<Complex64>,
    samples_per_symbol: usize,
) -> SampledSignal<Complex64> {
    let r = samples_per_symbol;
    let len = if symbols.is_empty() {
        0
    } else {
        (symbols.len() - 1) * r + pulse.len()
    };
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    let g = pulse.samples();
    for (k, &a) in symbols.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, &gv) in out[k * r..k * r + g.len()].iter_mut().zip(g) {
            *o += gv * a;
        }
    }
    SampledSignal::new(out, pulse.sample_period(), pulse.start_index()).expect("valid period")
}

/// Memoryless square-law detection `|x|²`.
pub fn photodetect(field: &SampledSignal<Complex64>) -> RealSignal {
    SampledSignal::new(
        field.samples().iter().map(|s| s.norm_sqr()).collect(),
        field.sample_period(),
        field.start_index(),
    )
    .expect("valid period")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn link(dl: f64) -> LinkConfig {
        LinkConfig::from_units(1550.0, dl, 36.0, 28.0, 8).unwrap()
    }

    #[test]
    fn pulse_peak_width_and_symmetry() {
        let cfg = LinkConfig::from_units(1550.0, 0.0, 36.0, 28.0, 8).unwrap();
        let p = shape_pulse(&cfg);
        assert_eq!(p.at(0), 1.0);
        assert_eq!(p.start_index(), -(p.end_index() - 1));
        for i in 0..p.end_index() {
            assert!((p.at(i) - p.at(-i)).abs() < 1e-12);
        }
        // T0 expressed on a grid where it falls exactly on a sample
        let cfg = LinkConfig {
            grid: GridSpec::new(36, 36e-12).unwrap(),
            ..cfg
        };
        let p = shape_pulse(&cfg);
        assert_relative_eq!(p.at(36), (-0.5f64).exp(), max_relative = 1e-12);
        assert!(*p.samples().first().unwrap() >= PULSE_TRUNCATION);
    }

    #[test]
    fn fiber_response_basics() {
        let h = fiber_response(&link(600.0));
        assert_eq!(h(0.0), Complex64::new(1.0, 0.0));
        for w in [1e9, 3e10, 2e11] {
            assert_relative_eq!(h(w).norm(), 1.0, max_relative = 1e-14);
        }
        let flat = fiber_response(&link(0.0));
        for w in [1e9, 3e10, 2e11] {
            assert_eq!(flat(w), Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn fiber_phase_regression_at_28ghz() {
        // β = (1550e-9)² · 0.6 / (4π · 3e8) = 3.8236975...e-22 s²
        // ω = 2π · 28e9 → βω² = 11.8347565... rad
        let cfg = link(600.0);
        let beta = 1550e-9f64.powi(2) * 0.6 / (4.0 * std::f64::consts::PI * 3e8);
        assert_relative_eq!(cfg.dispersion_coefficient(), beta, max_relative = 1e-15);
        assert_relative_eq!(beta, 3.823_697_5e-22, max_relative = 1e-7);
        let w = 2.0 * std::f64::consts::PI * 28e9;
        let phase = 11.834_756_5_f64;
        let h = fiber_response(&cfg)(w);
        let expect = Complex64::from_polar(1.0, -phase);
        assert!((h - expect).norm() < 1e-6, "{h} vs {expect}");
    }

    #[test]
    fn single_symbol_without_dispersion_is_the_pulse() {
        let cfg = link(0.0);
        let p = shape_pulse(&cfg);
        let e = propagate(&[1.0], &cfg);
        for i in p.start_index()..p.end_index() {
            assert!((e.at(i) - Complex64::new(p.at(i), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_symbols_give_zero_field() {
        let e = propagate(&[0.0; 16], &link(600.0));
        assert!(e.samples().iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn dispersion_preserves_energy() {
        let symbols = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let e0 = propagate(&symbols, &link(0.0)).energy();
        let e1 = propagate(&symbols, &link(600.0)).energy();
        assert_relative_eq!(e0, e1, max_relative = 1e-6);
    }

    #[test]
    fn propagate_is_linear() {
        let cfg = link(800.0);
        let a = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let b = [0.0, 2.0, 1.0, -1.0, 0.5, 1.0];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.7 * x + y).collect();
        let ea = propagate(&a, &cfg);
        let eb = propagate(&b, &cfg);
        let es = propagate(&sum, &cfg);
        for i in es.start_index()..es.end_index() {
            let d = es.at(i) - (ea.at(i) * 0.7 + eb.at(i));
            assert!(d.norm() < 1e-10);
        }
    }

    #[test]
    fn photodetect_pointwise() {
        let c = Complex64::new(0.6, -0.8);
        let x = SampledSignal::new(vec![c; 5], 1.0, 0).unwrap();
        let y = photodetect(&x);
        assert!(y.samples().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let y2 = photodetect(&x.scaled(3.0));
        assert!(y2.samples().iter().all(|&v| (v - 9.0).abs() < 1e-12));
        let z = photodetect(&SampledSignal::zeros(3, 1.0, 0).unwrap());
        assert!(z.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn isolated_pulses_detect_to_scaled_intensity() {
        let cfg = link(0.0);
        let p = shape_pulse(&cfg);
        let r = cfg.samples_per_symbol() as i64;
        // 20 symbols apart is far beyond the 1e-8 pulse support at T0 = 36 ps
        let mut symbols = vec![0.0; 41];
        symbols[0] = 1.0;
        symbols[20] = 2.0;
        symbols[40] = 0.5;
        let y = photodetect(&propagate(&symbols, &cfg));
        for (k, &a) in symbols.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for i in p.start_index()..p.end_index() {
                let want = a * a * p.at(i) * p.at(i);
                assert!((y.at(k as i64 * r + i) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pam4_gray_mapping_round_trips() {
        let c = Constellation::pam4();
        for i in 0..4 {
            assert_eq!(c.index_of_bits(c.bits(i)), i);
        }
        for i in 0..3 {
            assert_eq!(c.bit_errors(i, i + 1), 1);
        }
        assert_eq!(c.levels, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(Constellation::ook().levels, vec![0.0, 1.0]);
    }
}
