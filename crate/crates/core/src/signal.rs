//! Uniformly sampled waveforms and the arithmetic shared by every other module.
//!
//! A [`SampledSignal`] carries its samples, the sample period in seconds and the
//! integer index of its first sample relative to the time origin, so signals with
//! different supports can be combined without losing their alignment.

use std::ops::{Add, AddAssign, Mul, Sub};

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// Relative tolerance used when comparing sample periods.
const PERIOD_RTOL: f64 = 1e-12;

/// Scalar types a [`SampledSignal`] can hold.
pub trait Sample:
    Copy
    + Default
    + PartialEq
    + std::fmt::Debug
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Mul<f64, Output = Self>
    + Send
    + Sync
{
    fn conj(self) -> Self;
    fn norm_sqr(self) -> f64;
    fn to_complex(self) -> Complex64;
}

impl Sample for f64 {
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn norm_sqr(self) -> f64 {
        self * self
    }
    #[inline]
    fn to_complex(self) -> Complex64 {
        Complex64::new(self, 0.0)
    }
}

impl Sample for Complex64 {
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    #[inline]
    fn to_complex(self) -> Complex64 {
        self
    }
}

/// Oversampling grid: `samples_per_symbol` samples in each symbol period.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub samples_per_symbol: usize,
    /// Symbol period in seconds.
    pub symbol_period: f64,
}

impl GridSpec {
    pub fn new(samples_per_symbol: usize, symbol_period: f64) -> Result<Self> {
        if samples_per_symbol == 0 {
            return Err(Error::Config("samples_per_symbol must be positive".into()));
        }
        if !(symbol_period > 0.0 && symbol_period.is_finite()) {
            return Err(Error::Config(format!(
                "symbol period must be positive, got {symbol_period}"
            )));
        }
        Ok(Self {
            samples_per_symbol,
            symbol_period,
        })
    }

    pub fn sample_period(&self) -> f64 {
        self.symbol_period / self.samples_per_symbol as f64
    }
}

/// A uniformly sampled waveform anchored on an integer sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal<T = Complex64> {
    samples: Vec<T>,
    sample_period: f64,
    start_index: i64,
}

pub type RealSignal = SampledSignal<f64>;

impl<T: Sample> SampledSignal<T> {
    pub fn new(samples: Vec<T>, sample_period: f64, start_index: i64) -> Result<Self> {
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::Config(format!(
                "sample period must be positive, got {sample_period}"
            )));
        }
        Ok(Self {
            samples,
            sample_period,
            start_index,
        })
    }

    pub fn zeros(len: usize, sample_period: f64, start_index: i64) -> Result<Self> {
        Self::new(vec![T::default(); len], sample_period, start_index)
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [T] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    /// One past the index of the last sample.
    pub fn end_index(&self) -> i64 {
        self.start_index + self.samples.len() as i64
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample at absolute index `i`, zero outside the stored support.
    #[inline]
    pub fn at(&self, i: i64) -> T {
        let k = i - self.start_index;
        if k < 0 || k >= self.samples.len() as i64 {
            T::default()
        } else {
            self.samples[k as usize]
        }
    }

    /// Σ|x|² · sample_period.
    pub fn energy(&self) -> f64 {
        self.sum_sq() * self.sample_period
    }

    /// Σ|x|² without the sample-period weight.
    pub fn sum_sq(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn to_complex(&self) -> SampledSignal<Complex64> {
        SampledSignal {
            samples: self.samples.iter().map(|s| s.to_complex()).collect(),
            sample_period: self.sample_period,
            start_index: self.start_index,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|&s| s * factor).collect(),
            ..self.clone()
        }
    }

    /// Restricts the signal to absolute indices `[from, to)`, zero-filling as needed.
    pub fn window(&self, from: i64, to: i64) -> Self {
        let len = (to - from).max(0) as usize;
        let samples = (0..len).map(|k| self.at(from + k as i64)).collect();
        Self {
            samples,
            sample_period: self.sample_period,
            start_index: from,
        }
    }

    /// Drops leading and trailing samples whose magnitude is below `rel` times the peak.
    pub fn trimmed(&self, rel: f64) -> Self {
        let peak = self.samples.iter().map(|s| s.norm_sqr()).fold(0.0, f64::max).sqrt();
        let thr = (rel * peak).powi(2);
        let first = self.samples.iter().position(|s| s.norm_sqr() >= thr);
        match first {
            None => Self {
                samples: Vec::new(),
                ..self.clone()
            },
            Some(first) => {
                let last = self.samples.iter().rposition(|s| s.norm_sqr() >= thr).unwrap_or(first);
                Self {
                    samples: self.samples[first..=last].to_vec(),
                    sample_period: self.sample_period,
                    start_index: self.start_index + first as i64,
                }
            }
        }
    }

    /// Sample-wise sum over the union of both supports.
    pub fn add(&self, other: &Self) -> Result<Self> {
        check_periods(self.sample_period, other.sample_period)?;
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        let from = self.start_index.min(other.start_index);
        let to = self.end_index().max(other.end_index());
        let mut out = self.window(from, to);
        for (k, &s) in other.samples.iter().enumerate() {
            out.samples[(other.start_index - from) as usize + k] += s;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }
}

fn check_periods(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > PERIOD_RTOL * a.abs().max(b.abs()) {
        return Err(Error::Config(format!("mismatched sample periods {a:e} and {b:e}")));
    }
    Ok(())
}

/// Full linear convolution. The output starts at `a.start + b.start`.
pub fn convolve<T: Sample>(a: &SampledSignal<T>, b: &SampledSignal<T>) -> Result<SampledSignal<T>> {
    check_periods(a.sample_period, b.sample_period)?;
    let start_index = a.start_index + b.start_index;
    if a.is_empty() || b.is_empty() {
        return SampledSignal::new(Vec::new(), a.sample_period, start_index);
    }
    let mut out = vec![T::default(); a.len() + b.len() - 1];
    for (i, &x) in a.samples.iter().enumerate() {
        if x == T::default() {
            continue;
        }
        for (j, &y) in b.samples.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    SampledSignal::new(out, a.sample_period, start_index)
}

/// Σ a[i]·conj(b[i − shift]) over the overlap of the two supports.
pub fn inner_product<T: Sample>(a: &SampledSignal<T>, b: &SampledSignal<T>, shift: i64) -> Result<T> {
    check_periods(a.sample_period, b.sample_period)?;
    Ok(inner_product_raw(
        &a.samples,
        a.start_index,
        &b.samples,
        b.start_index + shift,
    ))
}

/// Inner product of two sample slices placed at absolute offsets `sa` and `sb`.
#[inline]
pub(crate) fn inner_product_raw<T: Sample>(a: &[T], sa: i64, b: &[T], sb: i64) -> T {
    let from = sa.max(sb);
    let to = (sa + a.len() as i64).min(sb + b.len() as i64);
    let mut acc = T::default();
    if to <= from {
        return acc;
    }
    let ia = (from - sa) as usize;
    let ib = (from - sb) as usize;
    let n = (to - from) as usize;
    for (&x, &y) in a[ia..ia + n].iter().zip(&b[ib..ib + n]) {
        acc += x * y.conj();
    }
    acc
}

/// Angular frequency (rad/s) of FFT bin `k` out of `n`, wrapped to the negative half.
pub fn fft_bin_omega(k: usize, n: usize, sample_period: f64) -> f64 {
    let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    2.0 * std::f64::consts::PI * kk / (n as f64 * sample_period)
}

/// Filters `x` by the frequency response `h(ω)` (ω in rad/s).
///
/// The input is centred in a zero-padded buffer of the next power of two at
/// least `len + 2·extra_support`, so tails up to `extra_support` samples on
/// either side are kept instead of wrapping around. The returned signal spans
/// the whole buffer.
pub fn apply_frequency_response<T, H>(
    x: &SampledSignal<T>,
    h: H,
    extra_support: usize,
) -> Result<SampledSignal<Complex64>>
where
    T: Sample,
    H: Fn(f64) -> Complex64,
{
    if x.is_empty() {
        return Err(Error::Config("cannot filter an empty signal".into()));
    }
    let n = (x.len() + 2 * extra_support).next_power_of_two();
    let pad_left = (n - x.len()) / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (k, &s) in x.samples.iter().enumerate() {
        buf[pad_left + k] = s.to_complex();
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        *v *= h(fft_bin_omega(k, n, x.sample_period));
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    for v in &mut buf {
        *v *= scale;
    }
    SampledSignal::new(buf, x.sample_period, x.start_index - pad_left as i64)
}

/// Adds circular complex white Gaussian noise.
///
/// `noise_psd` is the two-sided complex-baseband power spectral density, so
/// each sample receives total variance `noise_psd / sample_period`, split
/// evenly between the in-phase and quadrature parts.
pub fn add_awgn(x: &SampledSignal<Complex64>, noise_psd: f64, rng_seed: u64) -> Result<SampledSignal<Complex64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    add_awgn_with(x, noise_psd, &mut rng)
}

/// [`add_awgn`] drawing from a caller-owned generator.
pub fn add_awgn_with<R: Rng + ?Sized>(
    x: &SampledSignal<Complex64>,
    noise_psd: f64,
    rng: &mut R,
) -> Result<SampledSignal<Complex64>> {
    if !(noise_psd >= 0.0) {
        return Err(Error::Config(format!(
            "noise psd must be non-negative, got {noise_psd}"
        )));
    }
    let mut out = x.clone();
    if noise_psd == 0.0 {
        return Ok(out);
    }
    let sigma = (noise_psd / x.sample_period / 2.0).sqrt();
    for s in &mut out.samples {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(sigma * re, sigma * im);
    }
    Ok(out)
}

/// Adds real white Gaussian noise with the given per-sample variance.
pub fn add_real_awgn_with<R: Rng + ?Sized>(x: &mut [f64], variance: f64, rng: &mut R) {
    if variance <= 0.0 {
        return;
    }
    let sigma = variance.sqrt();
    for s in x {
        let n: f64 = rng.sample(StandardNormal);
        *s += sigma * n;
    }
}
