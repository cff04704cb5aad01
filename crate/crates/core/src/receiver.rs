//! Sequence detectors built on the orthogonal kernel model.
//!
//! Three designs are supported:
//!
//! * `NopfMu`: the photocurrent is sampled once per symbol and decoded with
//!   trained per-sequence means (the μ metric).
//! * `VpfSigma`: each branch applies a matched filter to an orthogonal kernel,
//!   a noise-whitening filter and symbol-rate sampling; the Viterbi decoder
//!   compares the outputs against the model prediction (the σ metric).
//! * `VpfMu`: the same prefilter followed by the μ metric.
//!
//! The decoder is generic over an emission table holding, for every window of
//! `L_VD` symbols and every branch, the expected observation.

use std::fmt;
use std::io::Write;
use std::path::Path;

use log::warn;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::channel::Constellation;
use crate::error::{Error, Result};
use crate::signal::RealSignal;
use crate::volterra::OrthoKernelSet;

/// Matched-filter taps below this fraction of the kernel peak are dropped.
const MF_TRUNCATION: f64 = 1e-8;

/// Equivalent-response taps below this fraction of the peak tap are dropped.
pub const RESPONSE_TRUNCATION: f64 = 1e-4;

/// Lag-0 loading applied (relative to the lag-0 value) when the autocorrelation is not positive definite.
const REGULARIZATION: f64 = 1e-10;

/// Largest hypothesis count accepted by [`brute_force_mlsd`].
pub const MAX_BRUTE_FORCE: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    NopfMu,
    VpfSigma,
    VpfMu,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::NopfMu, Design::VpfSigma, Design::VpfMu];

    pub fn name(&self) -> &'static str {
        match self {
            Design::NopfMu => "nopf_mu",
            Design::VpfSigma => "vpf_sigma",
            Design::VpfMu => "vpf_mu",
        }
    }

    pub fn uses_prefilter(&self) -> bool {
        !matches!(self, Design::NopfMu)
    }

    pub fn uses_mu(&self) -> bool {
        !matches!(self, Design::VpfSigma)
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Design::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown receiver design {s:?}")))
    }
}

/// Multiplications per detected symbol, `U·(L_MF + L_WF + A^{L_VD})`.
pub fn complexity_estimate(u: u64, l_mf: u64, l_wf: u64, a: u64, l_vd: u32) -> u64 {
    u * (l_mf + l_wf + a.pow(l_vd))
}

/// A real sequence at symbol rate whose first entry sits at symbol index `start`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymbolSeq {
    pub start: i64,
    pub values: Vec<f64>,
}

impl SymbolSeq {
    pub fn new(start: i64, values: Vec<f64>) -> Self {
        Self { start, values }
    }

    pub fn at(&self, k: i64) -> f64 {
        let i = k - self.start;
        if i < 0 {
            return 0.0;
        }
        self.values.get(i as usize).copied().unwrap_or(0.0)
    }

    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64
    }

    pub fn peak(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Drops leading and trailing entries below `threshold` in magnitude.
    pub fn trimmed_abs(&self, threshold: f64) -> Self {
        let first = self.values.iter().position(|v| v.abs() >= threshold);
        match first {
            None => Self::default(),
            Some(first) => {
                let last = self.values.iter().rposition(|v| v.abs() >= threshold).unwrap();
                Self::new(self.start + first as i64, self.values[first..=last].to_vec())
            }
        }
    }

    pub fn convolve(&self, other: &SymbolSeq) -> SymbolSeq {
        if self.values.is_empty() || other.values.is_empty() {
            return SymbolSeq::default();
        }
        let mut out = vec![0.0; self.values.len() + other.values.len() - 1];
        for (i, &a) in self.values.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &b) in out[i..].iter_mut().zip(&other.values) {
                *o += a * b;
            }
        }
        SymbolSeq::new(self.start + other.start, out)
    }
}

/// Symbol-spaced autocorrelation `ρ[n] = Σ_i h[i]·h[i + nR]` for `n ≥ 0` (ρ is even).
pub fn symbol_autocorrelation(h: &[f64], r: usize) -> Vec<f64> {
    let lags = h.len().div_ceil(r).max(1);
    (0..lags)
        .map(|n| {
            let s = n * r;
            h.iter().zip(&h[s.min(h.len())..]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Causal minimum-phase factor `q` with `Σ_n ρ[|n|] z^{−n} = Q(z)·Q(1/z)`,
/// computed by cepstral folding on an `nfft`-point grid.
///
/// Returns `None` when the folded spectrum is not strictly positive.
pub fn minimum_phase_factor(rho: &[f64], nfft: usize) -> Option<(Vec<f64>, Vec<f64>)> {
    assert!(nfft.is_power_of_two() && nfft >= 2 * rho.len());
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    buf[0] = Complex64::new(rho[0], 0.0);
    for (n, &v) in rho.iter().enumerate().skip(1) {
        buf[n] = Complex64::new(v, 0.0);
        buf[nfft - n] = Complex64::new(v, 0.0);
    }
    fwd.process(&mut buf);
    if buf.iter().any(|s| !(s.re > 0.0)) {
        return None;
    }
    for s in buf.iter_mut() {
        *s = Complex64::new(s.re.ln(), 0.0);
    }
    inv.process(&mut buf);
    let scale = 1.0 / nfft as f64;
    let half = nfft / 2;
    let mut cep = vec![Complex64::new(0.0, 0.0); nfft];
    cep[0] = buf[0] * scale * 0.5;
    for n in 1..half {
        cep[n] = buf[n] * scale;
    }
    cep[half] = buf[half] * scale * 0.5;

    fwd.process(&mut cep);
    let mut q: Vec<Complex64> = cep.iter().map(|c| c.exp()).collect();
    let mut q_inv: Vec<Complex64> = cep.iter().map(|c| (-c).exp()).collect();
    inv.process(&mut q);
    inv.process(&mut q_inv);
    Some((
        q.iter().map(|c| c.re * scale).collect(),
        q_inv.iter().map(|c| c.re * scale).collect(),
    ))
}

/// Front end of one prefilter branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchFilters {
    /// Position in the pivot order.
    pub branch: usize,
    /// Original kernel number of the branch kernel.
    pub kernel: usize,
    /// Branch kernel `h_u`; the matched filter is its time reverse, applied as a correlation.
    pub matched: RealSignal,
    /// Noise autocorrelation at the symbol-rate matched-filter output, lags 0, 1, ….
    pub autocorrelation: Vec<f64>,
    /// Whitening taps: `v[k] = Σ_j w[j]·z[k + j]`.
    pub whitening: Vec<f64>,
    /// Equivalent response `c_u` of kernel, matched filter and whitening filter.
    pub equivalent: SymbolSeq,
    /// Whether lag-0 loading was needed to factor the autocorrelation.
    pub regularized: bool,
}

impl BranchFilters {
    /// Matched-filter length in samples.
    pub fn matched_len(&self) -> usize {
        self.matched.len()
    }

    /// Symbol-rate matched-filter output `z[k] = Σ_i h_u[i]·y[kR + i]` for `k ∈ [from, to)`.
    pub fn matched_output(&self, y: &RealSignal, r: usize, from: i64, to: i64) -> SymbolSeq {
        let h = self.matched.samples();
        let hs = self.matched.start_index();
        let ys = y.start_index();
        let yv = y.samples();
        let values = (from..to)
            .map(|k| {
                let base = k * r as i64 + hs - ys;
                let lo = (-base).max(0) as usize;
                let hi = ((yv.len() as i64 - base).min(h.len() as i64)).max(0) as usize;
                if lo >= hi {
                    return 0.0;
                }
                let b = (base + lo as i64) as usize;
                h[lo..hi].iter().zip(&yv[b..b + hi - lo]).map(|(a, b)| a * b).sum()
            })
            .collect();
        SymbolSeq::new(from, values)
    }

    /// Whitened outputs `v[k]` for `k ∈ [from, to)`.
    pub fn prefilter(&self, y: &RealSignal, r: usize, from: i64, to: i64) -> SymbolSeq {
        let taps = self.whitening.len() as i64;
        let z = self.matched_output(y, r, from, to + taps - 1);
        whiten(&z, &self.whitening, from, to)
    }
}

/// Applies the anticausal whitening filter: `v[k] = Σ_j w[j]·z[k + j]`.
pub fn whiten(z: &SymbolSeq, w: &[f64], from: i64, to: i64) -> SymbolSeq {
    let values = (from..to)
        .map(|k| w.iter().enumerate().map(|(j, &wj)| wj * z.at(k + j as i64)).sum())
        .collect();
    SymbolSeq::new(from, values)
}

/// Builds matched, whitening and equivalent filters for the first `u` kernels in pivot order.
pub fn build_branch_filters(oks: &OrthoKernelSet, u: usize, whitening_taps: usize) -> Result<Vec<BranchFilters>> {
    if u < 1 || u > oks.count() {
        return Err(Error::Config(format!(
            "branch count U = {u} must lie in 1..={}",
            oks.count()
        )));
    }
    if whitening_taps < 1 {
        return Err(Error::Config("whitening filter needs at least one tap".into()));
    }
    let r = oks.grid().samples_per_symbol;
    (0..u)
        .map(|b| {
            let kernel = oks.pivot_order()[b];
            let matched = oks.kernel(kernel).trimmed(MF_TRUNCATION);
            design_branch(b, kernel, matched, r, whitening_taps)
        })
        .collect()
}

/// Filters for a single kernel sampled `r` times per symbol.
pub fn design_branch(
    branch: usize,
    kernel: usize,
    matched: RealSignal,
    r: usize,
    whitening_taps: usize,
) -> Result<BranchFilters> {
    let rho = symbol_autocorrelation(matched.samples(), r);
    if !(rho[0] > 0.0) {
        return Err(Error::ZeroPivot { pivot: kernel });
    }
    let nfft = (64 * rho.len().max(whitening_taps)).next_power_of_two().max(1024);
    let mut loaded = rho.clone();
    let mut regularized = false;
    let (_, q_inv) = loop {
        if let Some(f) = minimum_phase_factor(&loaded, nfft) {
            break f;
        }
        let eps = if regularized {
            (loaded[0] - rho[0]) * 10.0
        } else {
            REGULARIZATION * rho[0]
        };
        warn!(
            "autocorrelation of branch {branch} is not positive definite; \
             adding {eps:.3e} at lag 0"
        );
        loaded[0] += eps;
        regularized = true;
    };
    let whitening: Vec<f64> = q_inv[..whitening_taps].to_vec();
    let rho_seq = {
        let l = rho.len() as i64;
        let values = (-(l - 1)..l).map(|n| rho[n.unsigned_abs() as usize]).collect();
        SymbolSeq::new(-(l - 1), values)
    };
    // c = ρ ∗ w_anticausal with w_anticausal[−j] = w[j]
    let w_rev = SymbolSeq::new(-(whitening_taps as i64 - 1), whitening.iter().rev().copied().collect());
    let c = rho_seq.convolve(&w_rev);
    let equivalent = c.trimmed_abs(RESPONSE_TRUNCATION * c.peak());
    Ok(BranchFilters {
        branch,
        kernel,
        matched,
        autocorrelation: rho,
        whitening,
        equivalent,
        regularized,
    })
}

/// Normalized autocorrelation at lags `1..=max_lag` of unit-variance white
/// noise passed through the matched filter, the whitening filter and
/// symbol-rate sampling, measured on `symbols` output samples.
pub fn whitened_noise_autocorrelation<R: rand::Rng + ?Sized>(
    bf: &BranchFilters,
    r: usize,
    symbols: usize,
    max_lag: usize,
    rng: &mut R,
) -> Vec<f64> {
    let taps = bf.whitening.len() + max_lag;
    let len = (symbols + taps + 1) * r + bf.matched.len();
    let mut noise = vec![0.0; len];
    crate::signal::add_real_awgn_with(&mut noise, 1.0, rng);
    let y = RealSignal::new(noise, bf.matched.sample_period(), bf.matched.start_index()).expect("valid period");
    let v = bf.prefilter(&y, r, 0, symbols as i64);
    normalized_autocorrelation(&v.values, max_lag)
}

/// `Σ x[k]x[k+l] / Σ x[k]²` for `l = 1..=max_lag`.
pub fn normalized_autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let d: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let e: f64 = d.iter().map(|v| v * v).sum();
    (1..=max_lag)
        .map(|l| d.iter().zip(&d[l..]).map(|(a, b)| a * b).sum::<f64>() / e)
        .collect()
}

/// Trellis over windows of `memory` symbols drawn from an alphabet of `alphabet` levels.
///
/// A state holds the newest `memory − 1` symbols, so there are `A^{L_VD−1}`
/// states and `A^{L_VD}` branches. Windows are packed as base-A integers with
/// the oldest symbol most significant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrellisSpec {
    pub alphabet: usize,
    pub memory: usize,
}

impl TrellisSpec {
    pub fn new(alphabet: usize, memory: usize) -> Result<Self> {
        if !(2..=256).contains(&alphabet) {
            return Err(Error::Config(format!("alphabet size {alphabet} unsupported")));
        }
        if memory < 1 {
            return Err(Error::Config("trellis memory must be at least 1".into()));
        }
        let branches = (alphabet as u128).checked_pow(memory as u32);
        if branches.is_none_or(|b| b > (1 << 26)) {
            return Err(Error::Config(format!(
                "trellis with A = {alphabet}, L_VD = {memory} is too large"
            )));
        }
        Ok(Self { alphabet, memory })
    }

    pub fn states(&self) -> usize {
        self.alphabet.pow(self.memory as u32 - 1)
    }

    pub fn branches(&self) -> usize {
        self.alphabet.pow(self.memory as u32)
    }

    /// Symbols of a window, oldest first.
    pub fn window_symbols(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.memory];
        let mut v = index;
        for slot in out.iter_mut().rev() {
            *slot = v % self.alphabet;
            v /= self.alphabet;
        }
        out
    }

    pub fn window_index(&self, symbols: &[usize]) -> usize {
        symbols.iter().fold(0, |acc, &s| acc * self.alphabet + s)
    }

    /// Windows ending at each `t` of `symbols[t+1−L_VD ..= t]`; `None` where the window leaves the slice.
    pub fn windows(&self, symbols: &[usize]) -> Vec<Option<usize>> {
        let l = self.memory;
        let modulus = self.branches();
        let mut acc = 0usize;
        symbols
            .iter()
            .enumerate()
            .map(|(t, &s)| {
                acc = (acc * self.alphabet + s) % modulus;
                (t + 1 >= l).then_some(acc)
            })
            .collect()
    }
}

/// Expected observation for every branch window and receiver branch.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTable {
    pub trellis: TrellisSpec,
    pub branches: usize,
    /// Row-major `A^{L_VD} × U`.
    pub values: Vec<f64>,
}

impl EmissionTable {
    pub fn new(trellis: TrellisSpec, branches: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != trellis.branches() * branches {
            return Err(Error::Length(format!(
                "emission table has {} entries, expected {}",
                values.len(),
                trellis.branches() * branches
            )));
        }
        Ok(Self {
            trellis,
            branches,
            values,
        })
    }

    pub fn row(&self, window: usize) -> &[f64] {
        &self.values[window * self.branches..(window + 1) * self.branches]
    }

    /// Squared Euclidean distance of an observation vector to a window's emission.
    pub fn branch_metric(&self, window: usize, obs: &[f64]) -> f64 {
        self.row(window).iter().zip(obs).map(|(e, o)| (o - e) * (o - e)).sum()
    }
}

/// Decisions and the metric of the surviving path.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiOutput {
    pub symbols: Vec<usize>,
    pub metric: f64,
}

/// Viterbi recursion over `observations` (row-major, one `U`-vector per step).
///
/// Step `t` appends symbol `t`; the decision for step `t` is committed once
/// step `t + traceback` has been processed, and the tail is resolved from the
/// best final state. Equal metrics resolve to the lowest-index predecessor.
pub fn viterbi(
    observations: &[f64],
    table: &EmissionTable,
    traceback: usize,
    initial_state: Option<usize>,
) -> Result<ViterbiOutput> {
    let u = table.branches;
    if u == 0 || !observations.len().is_multiple_of(u) {
        return Err(Error::Length(format!(
            "{} observations do not split into {u}-branch vectors",
            observations.len()
        )));
    }
    let tr = table.trellis;
    let a = tr.alphabet;
    let ns = tr.states();
    let steps = observations.len() / u;
    if let Some(s) = initial_state {
        if s >= ns {
            return Err(Error::Config(format!("initial state {s} out of range")));
        }
    }
    let traceback = traceback.max(1);
    let ring = traceback + 1;
    // survivor: for memory ≥ 2 the oldest symbol of the predecessor, for memory 1 the input symbol
    let mut surv = vec![0u8; ring * ns];
    let mut metric: Vec<f64> = match initial_state {
        Some(s) => (0..ns).map(|i| if i == s { 0.0 } else { f64::INFINITY }).collect(),
        None => vec![0.0; ns],
    };
    let mut next = vec![0.0; ns];
    let mut bm = vec![0.0; tr.branches()];
    let mut out = vec![0usize; steps];
    let mut offset = 0.0;
    let hi_weight = if tr.memory >= 2 { ns / a } else { 0 };

    let trace = |surv: &[u8], from_step: usize, state: usize, back: usize, out: &mut [usize], write_all: bool| {
        let mut s = state;
        let mut t = from_step;
        for i in 0..=back {
            let row = &surv[(t % ring) * ns..(t % ring + 1) * ns];
            let sym = if tr.memory >= 2 { s % a } else { row[0] as usize };
            if write_all || i == back {
                out[t] = sym;
            }
            if i == back {
                break;
            }
            if tr.memory >= 2 {
                s = row[s] as usize * hi_weight + s / a;
            }
            t -= 1;
        }
    };

    for t in 0..steps {
        let obs = &observations[t * u..(t + 1) * u];
        for (w, m) in bm.iter_mut().enumerate() {
            *m = table.branch_metric(w, obs);
        }
        let row = &mut surv[(t % ring) * ns..(t % ring + 1) * ns];
        if tr.memory == 1 {
            let (mut best, mut arg) = (f64::INFINITY, 0usize);
            for (s, &m) in bm.iter().enumerate() {
                if m < best {
                    best = m;
                    arg = s;
                }
            }
            next[0] = metric[0] + best;
            row[0] = arg as u8;
        } else {
            for (s, nx) in next.iter_mut().enumerate() {
                let lo = s / a;
                let sym = s % a;
                let mut best = f64::INFINITY;
                let mut arg = 0u8;
                for hi in 0..a {
                    let prev = hi * hi_weight + lo;
                    let m = metric[prev] + bm[prev * a + sym];
                    if m < best {
                        best = m;
                        arg = hi as u8;
                    }
                }
                *nx = best;
                row[s] = arg;
            }
        }
        std::mem::swap(&mut metric, &mut next);
        let (best_state, best) = argmin(&metric);
        if best.is_finite() && best != 0.0 {
            metric.iter_mut().for_each(|m| *m -= best);
            offset += best;
        }
        if t >= traceback {
            trace(&surv, t, best_state, traceback, &mut out, false);
        }
    }
    if steps > 0 {
        let (best_state, best) = argmin(&metric);
        let back = (steps - 1).min(traceback);
        trace(&surv, steps - 1, best_state, back, &mut out, true);
        offset += best;
    }
    Ok(ViterbiOutput {
        symbols: out,
        metric: offset,
    })
}

fn argmin(v: &[f64]) -> (usize, f64) {
    let mut arg = 0;
    let mut best = f64::INFINITY;
    for (i, &m) in v.iter().enumerate() {
        if m < best {
            best = m;
            arg = i;
        }
    }
    (arg, best)
}

/// Exhaustive search over all `A^{block_len}` blocks for the smallest metric.
/// Blocks are enumerated with the first symbol most significant; ties keep the earliest.
pub fn brute_force_mlsd<F>(alphabet: usize, block_len: usize, mut metric: F) -> Result<Vec<usize>>
where
    F: FnMut(&[usize]) -> f64,
{
    let total = (alphabet as u128).checked_pow(block_len as u32).unwrap_or(u128::MAX);
    if total > MAX_BRUTE_FORCE {
        return Err(Error::BlockTooLarge(total));
    }
    let mut cand = vec![0usize; block_len];
    let mut best = f64::INFINITY;
    let mut arg = cand.clone();
    for n in 0..total as u64 {
        let mut v = n as usize;
        for slot in cand.iter_mut().rev() {
            *slot = v % alphabet;
            v /= alphabet;
        }
        let m = metric(&cand);
        if m < best {
            best = m;
            arg.copy_from_slice(&cand);
        }
    }
    Ok(arg)
}

/// Stacks per-branch symbol-rate sequences into row-major Viterbi
/// observations: step `t` receives `seq_u[first + t − delay]`.
pub fn align_observations(received: &[SymbolSeq], first: i64, steps: usize, delay: i64) -> Vec<f64> {
    let u = received.len();
    let mut out = vec![0.0; steps * u];
    for t in 0..steps {
        for (b, seq) in received.iter().enumerate() {
            out[t * u + b] = seq.at(first + t as i64 - delay);
        }
    }
    out
}

/// Model prediction of the whitened outputs in terms of the raw product streams:
/// `v_u[k] = Σ_q Σ_d e_q[d]·a_{k−d}·a_{k−d+q}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeResponse {
    /// `per_kernel[q]` is `e_q`; empty when kernel `q` does not reach this branch.
    pub per_kernel: Vec<SymbolSeq>,
}

impl CompositeResponse {
    pub fn energy(&self) -> f64 {
        self.per_kernel
            .iter()
            .flat_map(|e| e.values.iter())
            .map(|v| v * v)
            .sum()
    }
}

/// `e_u = c_u` for the branch kernel and `e_q = c_u ∗ λ^{(u,q)}` for every kernel projected on it.
pub fn composite_response(oks: &OrthoKernelSet, bf: &BranchFilters) -> CompositeResponse {
    let c = &bf.equivalent;
    let thr = RESPONSE_TRUNCATION * c.peak();
    let first = oks.shifts().first;
    let per_kernel = (0..oks.count())
        .map(|q| {
            if q == bf.kernel {
                c.clone()
            } else if let Some(lam) = oks.lambda(bf.kernel, q) {
                c.convolve(&SymbolSeq::new(first, lam.to_vec())).trimmed_abs(thr)
            } else {
                SymbolSeq::default()
            }
        })
        .collect();
    CompositeResponse { per_kernel }
}

/// Terms `(q, d)` of a composite response that fit into a window of `memory`
/// symbols when observations are delayed by `delay` steps.
fn fits(q: usize, d: i64, delay: i64, memory: usize) -> bool {
    d >= q as i64 - delay && d <= memory as i64 - 1 - delay
}

/// Fraction of composite energy captured by the window at a given delay.
pub fn captured_energy(responses: &[CompositeResponse], delay: i64, memory: usize) -> f64 {
    let mut inside = 0.0;
    let mut total = 0.0;
    for resp in responses {
        for (q, e) in resp.per_kernel.iter().enumerate() {
            for (i, &v) in e.values.iter().enumerate() {
                let d = e.start + i as i64;
                total += v * v;
                if fits(q, d, delay, memory) {
                    inside += v * v;
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

/// σ-metric model: composite responses, the chosen delay and the resulting emission table.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaModel {
    pub responses: Vec<CompositeResponse>,
    pub delay: i64,
    pub captured: f64,
    pub table: EmissionTable,
}

/// Builds the σ-metric emission table for the given branches.
///
/// The observation delay `D` maximizes the composite energy inside the window;
/// terms outside the window are dropped.
pub fn sigma_model(
    oks: &OrthoKernelSet,
    filters: &[BranchFilters],
    constellation: &Constellation,
    trellis: TrellisSpec,
) -> Result<SigmaModel> {
    if filters.is_empty() {
        return Err(Error::Config("sigma metric needs at least one branch".into()));
    }
    if trellis.alphabet != constellation.size() {
        return Err(Error::Config(
            "trellis alphabet does not match the constellation".into(),
        ));
    }
    let responses: Vec<CompositeResponse> = filters.iter().map(|bf| composite_response(oks, bf)).collect();
    let (dmin, dmax) = responses
        .iter()
        .flat_map(|r| r.per_kernel.iter())
        .filter(|e| !e.values.is_empty())
        .fold((i64::MAX, i64::MIN), |(lo, hi), e| {
            (lo.min(e.start), hi.max(e.end() - 1))
        });
    let mut delay = 0;
    let mut captured = -1.0;
    for d in -dmax..=(trellis.memory as i64 - 1 - dmin) {
        let c = captured_energy(&responses, d, trellis.memory);
        if c > captured {
            captured = c;
            delay = d;
        }
    }
    let table = sigma_table(&responses, delay, constellation, trellis)?;
    Ok(SigmaModel {
        responses,
        delay,
        captured,
        table,
    })
}

/// Emission table of composite responses truncated to the window at `delay`.
pub fn sigma_table(
    responses: &[CompositeResponse],
    delay: i64,
    constellation: &Constellation,
    trellis: TrellisSpec,
) -> Result<EmissionTable> {
    let l = trellis.memory as i64;
    let u = responses.len();
    // (branch, q, position of a_{k−D−d} in the window, coefficient)
    let mut terms: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (b, resp) in responses.iter().enumerate() {
        for (q, e) in resp.per_kernel.iter().enumerate() {
            for (i, &v) in e.values.iter().enumerate() {
                let d = e.start + i as i64;
                if v != 0.0 && fits(q, d, delay, trellis.memory) {
                    terms.push((b, q, (l - 1 - delay - d) as usize, v));
                }
            }
        }
    }
    let mut values = vec![0.0; trellis.branches() * u];
    for w in 0..trellis.branches() {
        let syms = trellis.window_symbols(w);
        let amp: Vec<f64> = syms.iter().map(|&s| constellation.level(s)).collect();
        let row = &mut values[w * u..(w + 1) * u];
        for &(b, q, pos, v) in &terms {
            row[b] += v * amp[pos] * amp[pos + q];
        }
    }
    EmissionTable::new(trellis, u, values)
}

/// σ-metric detection of `steps` symbols from per-branch whitened outputs.
pub fn viterbi_sigma(
    received: &[SymbolSeq],
    model: &SigmaModel,
    first: i64,
    steps: usize,
    traceback: usize,
    initial_state: Option<usize>,
) -> Result<ViterbiOutput> {
    if received.len() != model.table.branches {
        return Err(Error::Config(format!(
            "{} received branches for a {}-branch model",
            received.len(),
            model.table.branches
        )));
    }
    let obs = align_observations(received, first, steps, model.delay);
    viterbi(&obs, &model.table, traceback, initial_state)
}

/// Per-window mean observations learned from a known training sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MuTable {
    pub trellis: TrellisSpec,
    pub branches: usize,
    pub delay: i64,
    /// Row-major `A^{L_VD} × U`.
    pub means: Vec<f64>,
    /// Samples per window (shared by all branches).
    pub counts: Vec<u64>,
    pub training_symbols: usize,
}

impl MuTable {
    pub fn coverage(&self) -> f64 {
        self.counts.iter().filter(|&&c| c > 0).count() as f64 / self.counts.len() as f64
    }

    pub fn mean(&self, window: usize, branch: usize) -> f64 {
        self.means[window * self.branches + branch]
    }

    pub fn emission_table(&self) -> Result<EmissionTable> {
        EmissionTable::new(self.trellis, self.branches, self.means.clone())
    }

    /// Writes `sequence,branch,mean,count` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let err = |e: csv::Error| Error::parse(path, e);
        w.write_record(["sequence", "branch", "mean", "count"]).map_err(err)?;
        for win in 0..self.trellis.branches() {
            for b in 0..self.branches {
                w.write_record([
                    win.to_string(),
                    b.to_string(),
                    self.mean(win, b).to_string(),
                    self.counts[win].to_string(),
                ])
                .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a table written by [`MuTable::write_csv`]; the trellis and delay are not part of the file.
    pub fn read_csv(path: &Path, trellis: TrellisSpec, delay: i64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => Error::parse(path, e),
        })?;
        let mut rows: Vec<(usize, usize, f64, u64)> = Vec::new();
        for rec in rdr.deserialize() {
            let rec: (usize, usize, f64, u64) = rec.map_err(|e| Error::parse(path, e))?;
            rows.push(rec);
        }
        let branches = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        let n = trellis.branches();
        if branches == 0 || rows.len() != n * branches {
            return Err(Error::parse(
                path,
                format!(
                    "expected {} rows for {n} sequences, found {}",
                    n * branches.max(1),
                    rows.len()
                ),
            ));
        }
        let mut means = vec![f64::NAN; n * branches];
        let mut counts = vec![0u64; n];
        for (seq, b, mean, count) in rows {
            if seq >= n {
                return Err(Error::parse(path, format!("sequence {seq} out of range")));
            }
            means[seq * branches + b] = mean;
            counts[seq] = count;
        }
        if means.iter().any(|m| m.is_nan()) {
            return Err(Error::parse(path, "duplicate or missing rows"));
        }
        let training_symbols = counts.iter().sum::<u64>() as usize;
        Ok(Self {
            trellis,
            branches,
            delay,
            means,
            counts,
            training_symbols,
        })
    }
}

/// Accumulates training statistics for every candidate delay `0..L_VD`.
#[derive(Debug, Clone)]
pub struct MuAccumulator {
    trellis: TrellisSpec,
    branches: usize,
    /// `[delay][window·U + u]`
    sums: Vec<Vec<f64>>,
    sq: Vec<Vec<f64>>,
    counts: Vec<u64>,
    symbols: usize,
}

impl MuAccumulator {
    pub fn new(trellis: TrellisSpec, branches: usize) -> Self {
        let cells = trellis.branches() * branches;
        Self {
            trellis,
            branches,
            sums: vec![vec![0.0; cells]; trellis.memory],
            sq: vec![vec![0.0; cells]; trellis.memory],
            counts: vec![0; trellis.branches()],
            symbols: 0,
        }
    }

    /// Adds one training block: `symbols` are transmitted indices, `received[u]`
    /// the branch observations on the same symbol axis; only steps in `[from, to)` count.
    pub fn add(&mut self, symbols: &[usize], received: &[SymbolSeq], from: usize, to: usize) -> Result<()> {
        if received.len() != self.branches {
            return Err(Error::Config(format!(
                "{} received branches for a {}-branch table",
                received.len(),
                self.branches
            )));
        }
        let windows = self.trellis.windows(symbols);
        let u = self.branches;
        for t in from..to.min(symbols.len()) {
            let Some(w) = windows[t] else { continue };
            self.counts[w] += 1;
            self.symbols += 1;
            for d in 0..self.trellis.memory {
                for (b, seq) in received.iter().enumerate() {
                    let v = seq.at(t as i64 - d as i64);
                    self.sums[d][w * u + b] += v;
                    self.sq[d][w * u + b] += v * v;
                }
            }
        }
        Ok(())
    }

    /// Adds the statistics of another accumulator over the same trellis.
    pub fn merge(&mut self, other: MuAccumulator) {
        assert_eq!(self.trellis, other.trellis);
        assert_eq!(self.branches, other.branches);
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.sq.iter_mut().zip(&other.sq) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(x, y)| *x += y);
        self.symbols += other.symbols;
    }

    /// Picks the delay with the smallest within-sequence variance and returns the means.
    pub fn finish(self) -> Result<MuTable> {
        let missing: Vec<usize> = (0..self.counts.len()).filter(|&w| self.counts[w] == 0).collect();
        if !missing.is_empty() {
            let total = self.counts.len();
            return Err(Error::Coverage {
                missing: missing.len(),
                total,
                first_missing: missing.iter().take(8).copied().collect(),
                suggested_training: suggested_training(total, self.symbols),
            });
        }
        let u = self.branches;
        let mut best = (f64::INFINITY, 0usize);
        for d in 0..self.trellis.memory {
            let spread: f64 = (0..self.counts.len() * u)
                .map(|i| {
                    let n = self.counts[i / u] as f64;
                    self.sq[d][i] - self.sums[d][i] * self.sums[d][i] / n
                })
                .sum();
            if spread < best.0 {
                best = (spread, d);
            }
        }
        let d = best.1;
        let means = (0..self.counts.len() * u)
            .map(|i| self.sums[d][i] / self.counts[i / u] as f64)
            .collect();
        Ok(MuTable {
            trellis: self.trellis,
            branches: u,
            delay: d as i64,
            means,
            counts: self.counts,
            training_symbols: self.symbols,
        })
    }
}

/// Training length that makes it likely every one of `windows` sequences is seen.
fn suggested_training(windows: usize, used: usize) -> usize {
    (64 * windows).max(2 * used)
}

/// Learns a μ table from one known training block.
pub fn train_mu(received: &[SymbolSeq], training_symbols: &[usize], trellis: TrellisSpec) -> Result<MuTable> {
    let mut acc = MuAccumulator::new(trellis, received.len());
    acc.add(training_symbols, received, 0, training_symbols.len())?;
    acc.finish()
}

/// μ-metric detection of `steps` symbols.
pub fn viterbi_mu(
    received: &[SymbolSeq],
    table: &MuTable,
    first: i64,
    steps: usize,
    traceback: usize,
    initial_state: Option<usize>,
) -> Result<ViterbiOutput> {
    if received.len() != table.branches {
        return Err(Error::Config(format!(
            "{} received branches for a {}-branch table",
            received.len(),
            table.branches
        )));
    }
    if let Some(w) = table.counts.iter().position(|&c| c == 0) {
        return Err(Error::Coverage {
            missing: table.counts.iter().filter(|&&c| c == 0).count(),
            total: table.counts.len(),
            first_missing: vec![w],
            suggested_training: suggested_training(table.counts.len(), table.training_symbols),
        });
    }
    let obs = align_observations(received, first, steps, table.delay);
    viterbi(&obs, &table.emission_table()?, traceback, initial_state)
}

/// Single-sample-per-symbol front end of the design without prefilter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolSampler {
    pub samples_per_symbol: usize,
    /// Sample offset within the symbol period.
    pub phase: usize,
}

impl SymbolSampler {
    /// Picks the phase whose samples carry the largest mean photocurrent.
    pub fn at_peak_power(y: &RealSignal, samples_per_symbol: usize) -> Self {
        let r = samples_per_symbol as i64;
        let mut sums = vec![0.0; samples_per_symbol];
        for (i, &v) in y.samples().iter().enumerate() {
            let idx = y.start_index() + i as i64;
            sums[idx.rem_euclid(r) as usize] += v;
        }
        let phase = argmax(&sums);
        Self {
            samples_per_symbol,
            phase,
        }
    }

    pub fn sample(&self, y: &RealSignal, from: i64, to: i64) -> SymbolSeq {
        let r = self.samples_per_symbol as i64;
        SymbolSeq::new(from, (from..to).map(|k| y.at(k * r + self.phase as i64)).collect())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut arg = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[arg] {
            arg = i;
        }
    }
    arg
}

/// Writes composite responses as `branch,kernel,lag,value` rows.
pub fn write_composite_csv(path: &Path, responses: &[CompositeResponse]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "branch,kernel,lag,value").map_err(io)?;
    for (b, r) in responses.iter().enumerate() {
        for (q, e) in r.per_kernel.iter().enumerate() {
            for (i, v) in e.values.iter().enumerate() {
                writeln!(w, "{b},{q},{},{v}", e.start + i as i64).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SampledSignal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_branch() -> BranchFilters {
        let k = SampledSignal::new(vec![1.0], 1.0, 0).unwrap();
        design_branch(0, 0, k, 1, 1).unwrap()
    }

    #[test]
    fn complexity_examples() {
        assert_eq!(complexity_estimate(1, 10, 5, 2, 5), 47);
        assert_eq!(complexity_estimate(3, 10, 5, 2, 5), 141);
        assert_eq!(complexity_estimate(1, 10, 5, 4, 7), 16399);
    }

    #[test]
    fn unit_kernel_gives_trivial_filters() {
        let bf = unit_branch();
        assert_eq!(bf.autocorrelation, vec![1.0]);
        assert!((bf.whitening[0] - 1.0).abs() < 1e-12);
        assert_eq!(bf.equivalent.start, 0);
        assert_eq!(bf.equivalent.values.len(), 1);
        assert!((bf.equivalent.values[0] - 1.0).abs() < 1e-12);
        assert!(!bf.regularized);
    }

    #[test]
    fn matched_output_peak_is_kernel_energy() {
        let h = vec![0.2, 0.9, 1.0, 0.4, -0.1, 0.05];
        let k = SampledSignal::new(h.clone(), 1.0, -2).unwrap();
        let bf = design_branch(0, 0, k.clone(), 2, 3).unwrap();
        // isolated symbol at k = 0 is the kernel itself
        let z = bf.matched_output(&k, 2, -4, 5);
        let e: f64 = h.iter().map(|v| v * v).sum();
        assert!((z.at(0) - e).abs() < 1e-12);
        for n in 1..3 {
            assert!((z.at(n) - bf.autocorrelation[n as usize]).abs() < 1e-12);
            assert!((z.at(-n) - bf.autocorrelation[n as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn minimum_phase_factor_reproduces_autocorrelation() {
        // ρ of the causal minimum-phase q = [1, 0.5]
        let rho = [1.25, 0.5];
        let (q, q_inv) = minimum_phase_factor(&rho, 256).unwrap();
        assert!((q[0] - 1.0).abs() < 1e-12 && (q[1] - 0.5).abs() < 1e-12);
        assert!(q[2..].iter().all(|v| v.abs() < 1e-12));
        // 1/(1 + 0.5 z^-1) = Σ (−0.5)^n z^-n
        for (n, v) in q_inv.iter().take(10).enumerate() {
            assert!((v - (-0.5f64).powi(n as i32)).abs() < 1e-9);
        }
        assert!(minimum_phase_factor(&[1.0, 0.6], 64).is_none());
    }

    #[test]
    fn non_positive_autocorrelation_is_regularized() {
        // ρ = [1, 0.5] has a spectral zero at π
        let k = SampledSignal::new(vec![1.0, 1.0], 1.0, 0).unwrap();
        let bf = design_branch(0, 0, k, 1, 4).unwrap();
        assert!(bf.regularized);
        assert!(bf.whitening.iter().all(|w| w.is_finite()));
    }

    #[test]
    fn trellis_indexing() {
        let t = TrellisSpec::new(2, 3).unwrap();
        assert_eq!(t.states(), 4);
        assert_eq!(t.branches(), 8);
        assert_eq!(t.window_symbols(6), vec![1, 1, 0]);
        assert_eq!(t.window_index(&[1, 1, 0]), 6);
        let w = t.windows(&[1, 0, 1, 1]);
        assert_eq!(w, vec![None, None, Some(5), Some(3)]);
        assert!(TrellisSpec::new(1, 3).is_err());
        assert!(TrellisSpec::new(2, 0).is_err());
    }

    fn linear_table(trellis: TrellisSpec, c: &[f64], levels: &[f64]) -> EmissionTable {
        // emission Σ_d c[d] a_{t−d} with the newest symbol last in the window
        let values = (0..trellis.branches())
            .map(|w| {
                let s = trellis.window_symbols(w);
                c.iter()
                    .enumerate()
                    .map(|(d, cd)| cd * levels[s[trellis.memory - 1 - d]])
                    .sum()
            })
            .collect();
        EmissionTable::new(trellis, 1, values).unwrap()
    }

    #[test]
    fn memoryless_trellis_is_a_slicer() {
        let t = TrellisSpec::new(4, 1).unwrap();
        let levels = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        let table = linear_table(t, &[1.0], &levels);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs: Vec<f64> = (0..500).map(|_| rng.random_range(-0.2..1.2)).collect();
        let out = viterbi(&obs, &table, 5, None).unwrap();
        for (o, &s) in obs.iter().zip(&out.symbols) {
            let slice = argmin(&levels.map(|l| (o - l).abs())).0;
            assert_eq!(s, slice);
        }
    }

    #[test]
    fn noiseless_linear_channel_decoded_exactly() {
        let t = TrellisSpec::new(2, 3).unwrap();
        let table = linear_table(t, &[1.0, 0.6, -0.3], &[0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sym: Vec<usize> = (0..300).map(|_| rng.random_range(0..2)).collect();
        let wins = t.windows(&sym);
        let obs: Vec<f64> = wins.iter().map(|w| table.row(w.unwrap_or(sym[0]))[0]).collect();
        let out = viterbi(&obs[2..], &table, 15, Some(t.window_index(&sym[..2]))).unwrap();
        assert_eq!(out.symbols, sym[2..]);
        assert!(out.metric.abs() < 1e-20);
    }

    #[test]
    fn viterbi_matches_brute_force_and_metric_is_additive() {
        let t = TrellisSpec::new(2, 3).unwrap();
        let table = linear_table(t, &[1.0, 0.8, 0.5], &[0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let obs: Vec<f64> = (0..10).map(|_| rng.random_range(-0.5..2.5)).collect();
            let init = rng.random_range(0..t.states());
            let out = viterbi(&obs, &table, 50, Some(init)).unwrap();
            let prefix = t.window_symbols(init);
            let path_metric = |cand: &[usize]| {
                let mut seq = prefix[1..].to_vec();
                seq.extend_from_slice(cand);
                t.windows(&seq)
                    .iter()
                    .skip(t.memory - 1)
                    .zip(&obs)
                    .map(|(w, o)| table.branch_metric(w.unwrap(), &[*o]))
                    .sum::<f64>()
            };
            let bf = brute_force_mlsd(2, 10, path_metric).unwrap();
            assert_eq!(out.symbols, bf);
            let m = path_metric(&out.symbols);
            assert!((m - out.metric).abs() <= 1e-12 * m.max(1e-300));
        }
    }

    #[test]
    fn brute_force_limits() {
        assert!(matches!(brute_force_mlsd(2, 21, |_| 0.0), Err(Error::BlockTooLarge(_))));
        let best = brute_force_mlsd(4, 1, |c| (c[0] as f64 - 2.2).abs()).unwrap();
        assert_eq!(best, vec![2]);
    }

    #[test]
    fn mu_training_on_deterministic_channel() {
        let t = TrellisSpec::new(2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sym: Vec<usize> = (0..400).map(|_| rng.random_range(0..2)).collect();
        // r[k] = a_k + 0.5 a_{k−1}
        let r = SymbolSeq::new(
            0,
            (0..sym.len())
                .map(|k| sym[k] as f64 + if k > 0 { 0.5 * sym[k - 1] as f64 } else { 0.0 })
                .collect(),
        );
        let table = train_mu(&[r], &sym, t).unwrap();
        assert_eq!(table.delay, 0);
        for w in 0..4 {
            let s = t.window_symbols(w);
            let want = s[1] as f64 + 0.5 * s[0] as f64;
            assert!((table.mean(w, 0) - want).abs() < 1e-12);
        }
        let expected: Vec<u64> = {
            let mut c = vec![0; 4];
            for w in t.windows(&sym).into_iter().flatten() {
                c[w] += 1;
            }
            c
        };
        assert_eq!(table.counts, expected);
        assert_eq!(table.coverage(), 1.0);
    }

    #[test]
    fn constant_training_fails_coverage() {
        let t = TrellisSpec::new(2, 3).unwrap();
        let sym = vec![1usize; 100];
        let r = SymbolSeq::new(0, vec![1.0; 100]);
        match train_mu(&[r], &sym, t) {
            Err(Error::Coverage { missing, total, .. }) => {
                assert_eq!(total, 8);
                assert_eq!(missing, 7);
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn mu_and_sigma_coincide_on_exact_linear_model() {
        let t = TrellisSpec::new(2, 3).unwrap();
        let table = linear_table(t, &[1.0, 0.4, 0.2], &[0.0, 1.0]);
        let mu = MuTable {
            trellis: t,
            branches: 1,
            delay: 0,
            means: table.values.clone(),
            counts: vec![1; 8],
            training_symbols: 8,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = SymbolSeq::new(0, (0..200).map(|_| rng.random_range(-0.3..2.0)).collect());
        let a = viterbi(
            &align_observations(std::slice::from_ref(&r), 0, 200, 0),
            &table,
            15,
            None,
        )
        .unwrap();
        let b = viterbi_mu(&[r], &mu, 0, 200, 15, None).unwrap();
        assert_eq!(a.symbols, b.symbols);
    }

    #[test]
    fn mu_table_csv_round_trip() {
        let t = TrellisSpec::new(2, 2).unwrap();
        let mu = MuTable {
            trellis: t,
            branches: 2,
            delay: 1,
            means: vec![0.1, 0.2, 1.0 / 3.0, -4.5e-7, 5.0, 6.0, 7.25, 8.0],
            counts: vec![3, 4, 5, 6],
            training_symbols: 18,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mu.csv");
        mu.write_csv(&p).unwrap();
        let back = MuTable::read_csv(&p, t, 1).unwrap();
        assert_eq!(back, mu);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sequence,branch,mean,count\n"));
    }

    #[test]
    fn symbol_seq_helpers() {
        let a = SymbolSeq::new(-1, vec![1.0, 2.0]);
        let b = SymbolSeq::new(2, vec![1.0, -1.0]);
        let c = a.convolve(&b);
        assert_eq!(c.start, 1);
        assert_eq!(c.values, vec![1.0, 1.0, -2.0]);
        assert_eq!(c.at(0), 0.0);
        let t = SymbolSeq::new(0, vec![1e-9, 0.5, 1.0, 1e-9]).trimmed_abs(1e-4);
        assert_eq!(t.start, 1);
        assert_eq!(t.values, vec![0.5, 1.0]);
    }

    #[test]
    fn design_names_round_trip() {
        for d in Design::ALL {
            assert_eq!(d.name().parse::<Design>().unwrap(), d);
        }
        assert!("vpf".parse::<Design>().is_err());
    }
}
