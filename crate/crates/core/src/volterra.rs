//! Second-order Volterra kernel model of the photodetected signal.
//!
//! Square-law detection of `Σ a_k g(t − kT)` expands exactly into
//!
//! ```text
//! y(t) = Σ_k a_k² f_0(t − kT) + Σ_{m>0} Σ_k a_k a_{k+m} f_m(t − kT)
//! f_0 = |g|²,   f_m(t) = 2 Re{ g(t) g*(t − mT) }
//! ```
//!
//! Keeping `M` kernels gives the truncated model `y^V`. The kernels overlap, so
//! [`orthogonalize`] walks them in a pivot order and removes from every later
//! kernel its least-squares projection onto symbol-spaced shifts of the pivots
//! already processed. The removed parts are re-attributed to the pivots through
//! the coefficient table λ, which turns the raw product streams `a_k a_{k+m}`
//! into the streams `b_k` of the orthogonal model `y^O` (see [`expand_b_streams`]).
//! With all kernels kept both models describe the same waveform.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;

use crate::channel::{dispersed_pulse, LinkConfig};
use crate::error::{Error, Result};
use crate::signal::{GridSpec, RealSignal, SampledSignal};

/// Kernel samples below this fraction of the largest kernel peak are dropped.
pub const KERNEL_TRUNCATION: f64 = 1e-8;

/// Pivots whose norm falls below this fraction of the largest raw kernel norm are rejected.
const ZERO_PIVOT_RTOL: f64 = 1e-12;

/// Relative diagonal size of the QR factor below which the shift matrix is treated as rank deficient.
const RANK_RTOL: f64 = 1e-12;

/// Raw kernels `f_0 … f_{M−1}` on a common support.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    kernels: Vec<Vec<f64>>,
    start_index: i64,
    grid: GridSpec,
}

impl KernelSet {
    pub fn new(kernels: Vec<Vec<f64>>, start_index: i64, grid: GridSpec) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::Config("kernel set needs at least one kernel".into()));
        }
        let len = kernels[0].len();
        if kernels.iter().any(|k| k.len() != len) {
            return Err(Error::Length("kernels must share a common support".into()));
        }
        Ok(Self {
            kernels,
            start_index,
            grid,
        })
    }

    /// Number of kernels M.
    pub fn count(&self) -> usize {
        self.kernels.len()
    }

    /// Common support length L in samples.
    pub fn kernel_len(&self) -> usize {
        self.kernels[0].len()
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn samples(&self, m: usize) -> &[f64] {
        &self.kernels[m]
    }

    pub fn kernel(&self, m: usize) -> RealSignal {
        SampledSignal::new(self.kernels[m].clone(), self.grid.sample_period(), self.start_index).expect("valid grid")
    }

    /// Σ f_m² for every kernel.
    pub fn energies(&self) -> Vec<f64> {
        self.kernels.iter().map(|k| k.iter().map(|v| v * v).sum()).collect()
    }
}

/// Computes `f_0 … f_{M−1}` of the dispersed pulse of `cfg`.
pub fn extract_kernels(cfg: &LinkConfig, count: usize) -> Result<KernelSet> {
    if count < 1 {
        return Err(Error::Config("kernel count M must be at least 1".into()));
    }
    cfg.validate()?;
    let g = dispersed_pulse(cfg);
    Ok(kernels_from_pulse(&g, cfg.grid, count))
}

/// Kernels of an arbitrary propagated pulse `g` sampled on `grid`.
pub fn kernels_from_pulse(g: &SampledSignal<num_complex::Complex64>, grid: GridSpec, count: usize) -> KernelSet {
    let r = grid.samples_per_symbol as i64;
    let from = g.start_index();
    let to = g.end_index() + (count as i64 - 1) * r;
    let kernels: Vec<Vec<f64>> = (0..count)
        .map(|m| {
            let shift = m as i64 * r;
            (from..to)
                .map(|i| {
                    let v = g.at(i) * g.at(i - shift).conj();
                    if m == 0 {
                        v.re
                    } else {
                        2.0 * v.re
                    }
                })
                .collect()
        })
        .collect();

    let peak = kernels
        .iter()
        .flat_map(|k| k.iter())
        .fold(0.0f64, |p, v| p.max(v.abs()));
    let thr = KERNEL_TRUNCATION * peak;
    let keep = |i: usize| kernels.iter().any(|k| k[i].abs() >= thr);
    let n = kernels[0].len();
    let first = (0..n).find(|&i| keep(i)).unwrap_or(0);
    let last = (0..n).rev().find(|&i| keep(i)).unwrap_or(first);
    let kernels = kernels.into_iter().map(|k| k[first..=last].to_vec()).collect();
    KernelSet {
        kernels,
        start_index: from + first as i64,
        grid,
    }
}

/// Order in which kernels serve as pivots.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum PivotOrder {
    /// Largest raw kernel energy first.
    #[default]
    EnergyDescending,
    Explicit(Vec<usize>),
}

impl PivotOrder {
    pub fn resolve(&self, ks: &KernelSet) -> Result<Vec<usize>> {
        let m = ks.count();
        match self {
            PivotOrder::EnergyDescending => {
                let e = ks.energies();
                let mut order: Vec<usize> = (0..m).collect();
                order.sort_by(|&a, &b| e[b].total_cmp(&e[a]).then(a.cmp(&b)));
                Ok(order)
            }
            PivotOrder::Explicit(order) => {
                let mut seen = vec![false; m];
                if order.len() != m {
                    return Err(Error::Config(format!(
                        "pivot order has {} entries for {m} kernels",
                        order.len()
                    )));
                }
                for &p in order {
                    if p >= m || seen[p] {
                        return Err(Error::Config(format!(
                            "pivot order {order:?} is not a permutation of 0..{m}"
                        )));
                    }
                    seen[p] = true;
                }
                Ok(order.clone())
            }
        }
    }
}

/// Symbol shifts `first, first+1, …, first+count−1` of each pivot used in the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftSpec {
    pub first: i64,
    pub count: usize,
}

impl ShiftSpec {
    /// Shifts covering the whole common kernel support on both sides of the
    /// pivot, with `M` extra symbols of margin each way.
    pub fn spanning(ks: &KernelSet) -> Self {
        let r = ks.grid.samples_per_symbol;
        let half = ks.kernel_len().div_ceil(r) + ks.count();
        Self {
            first: -(half as i64),
            count: 2 * half + 1,
        }
    }

    pub fn last(&self) -> i64 {
        self.first + self.count as i64 - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = i64> {
        self.first..self.first + self.count as i64
    }
}

/// Orthogonalized kernels and the projection coefficients that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoKernelSet {
    /// `kernels[q]` is the residual of `f_q`, indexed by the original kernel number.
    kernels: Vec<Vec<f64>>,
    start_index: i64,
    grid: GridSpec,
    pivot_order: Vec<usize>,
    shifts: ShiftSpec,
    /// `(p, q) → λ^{(p,q)}`, one coefficient per shift, for every pivot `p` processed before `q`.
    lambda: BTreeMap<(usize, usize), Vec<f64>>,
}

impl OrthoKernelSet {
    /// Assembles a set from stored parts, e.g. after reading it back from disk.
    pub fn from_parts(
        kernels: Vec<Vec<f64>>,
        start_index: i64,
        grid: GridSpec,
        pivot_order: Vec<usize>,
        shifts: ShiftSpec,
        lambda: BTreeMap<(usize, usize), Vec<f64>>,
    ) -> Result<Self> {
        let m = kernels.len();
        if m == 0 || pivot_order.len() != m {
            return Err(Error::Length("pivot order must list every kernel".into()));
        }
        let len = kernels[0].len();
        if kernels.iter().any(|k| k.len() != len) {
            return Err(Error::Length("orthogonal kernels must share a support".into()));
        }
        if lambda.values().any(|v| v.len() != shifts.count) {
            return Err(Error::Length("lambda vectors must have one entry per shift".into()));
        }
        Ok(Self {
            kernels,
            start_index,
            grid,
            pivot_order,
            shifts,
            lambda,
        })
    }

    pub fn count(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels[0].len()
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn pivot_order(&self) -> &[usize] {
        &self.pivot_order
    }

    pub fn shifts(&self) -> ShiftSpec {
        self.shifts
    }

    pub fn lambda_table(&self) -> &BTreeMap<(usize, usize), Vec<f64>> {
        &self.lambda
    }

    pub fn lambda(&self, pivot: usize, kernel: usize) -> Option<&[f64]> {
        self.lambda.get(&(pivot, kernel)).map(Vec::as_slice)
    }

    /// Samples of `h_q` by original kernel number.
    pub fn samples(&self, q: usize) -> &[f64] {
        &self.kernels[q]
    }

    pub fn kernel(&self, q: usize) -> RealSignal {
        SampledSignal::new(self.kernels[q].clone(), self.grid.sample_period(), self.start_index).expect("valid grid")
    }

    /// Kernel at position `u` of the pivot order.
    pub fn branch_kernel(&self, u: usize) -> RealSignal {
        self.kernel(self.pivot_order[u])
    }

    /// Σ h² per kernel, listed in pivot order.
    pub fn energies_in_pivot_order(&self) -> Vec<f64> {
        self.pivot_order
            .iter()
            .map(|&q| self.kernels[q].iter().map(|v| v * v).sum())
            .collect()
    }

    /// Largest `|⟨h_q, h_p(· − nR)⟩| / (‖h_q‖‖h_p‖)` over every pivot `p`
    /// processed before `q` and every shift in the projection family.
    pub fn max_orthogonality_residual(&self) -> f64 {
        let r = self.grid.samples_per_symbol as i64;
        let norms: Vec<f64> = self
            .kernels
            .iter()
            .map(|k| k.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mut worst = 0.0f64;
        for (s, &p) in self.pivot_order.iter().enumerate() {
            for &q in &self.pivot_order[s + 1..] {
                if norms[q] == 0.0 || norms[p] == 0.0 {
                    continue;
                }
                for n in self.shifts.iter() {
                    let ip = crate::signal::inner_product_raw(&self.kernels[q], 0, &self.kernels[p], n * r);
                    worst = worst.max(ip.abs() / (norms[q] * norms[p]));
                }
            }
        }
        worst
    }
}

/// Least-squares projector onto the columns of a tall matrix.
struct Projector {
    a: DMatrix<f64>,
    solver: Solver,
}

enum Solver {
    Qr { q: DMatrix<f64>, r: DMatrix<f64> },
    MinNorm(nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, f64),
}

impl Projector {
    fn new(a: DMatrix<f64>, pivot: usize) -> Self {
        let qr = a.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        let solver = if min > RANK_RTOL * max {
            Solver::Qr { q: qr.q(), r }
        } else {
            warn!(
                "shift matrix of pivot {pivot} is rank deficient (|R| ratio {:.3e}); \
                 using minimum-norm least squares",
                min / max
            );
            let svd = a.clone().svd(true, true);
            let eps = RANK_RTOL * svd.singular_values.max();
            Solver::MinNorm(svd, eps)
        };
        Self { a, solver }
    }

    /// Coefficients minimising ‖b − A x‖ for every column of `b`.
    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.solver {
            Solver::Qr { q, r } => {
                let qtb = q.transpose() * b;
                r.solve_upper_triangular(&qtb).expect("full-rank triangular factor")
            }
            Solver::MinNorm(svd, eps) => svd.solve(b, *eps).expect("svd has both factors"),
        }
    }
}

/// Pivoted orthogonalization of a kernel set.
///
/// At step `s` the kernel `p_s` becomes a pivot and every kernel not yet used
/// as a pivot is replaced by its least-squares residual against the shifted
/// copies `h_p(· − nR)` of all pivots so far. Projecting on the joint family
/// keeps each residual orthogonal to the earlier pivots as well, because a
/// shifted copy of a later pivot is only orthogonal to earlier pivots inside
/// their shift window. Every projection is applied twice, as in reorthogonalized
/// Gram-Schmidt, to push the residual inner products down to rounding level.
pub fn orthogonalize(ks: &KernelSet, pivot_order: &PivotOrder, shifts: Option<ShiftSpec>) -> Result<OrthoKernelSet> {
    let m = ks.count();
    let order = pivot_order.resolve(ks)?;
    let shifts = shifts.unwrap_or_else(|| ShiftSpec::spanning(ks));
    if shifts.count == 0 {
        return Err(Error::Config("shift count N must be at least 1".into()));
    }
    let r = ks.grid.samples_per_symbol as i64;
    let steps = m as i64 - 1;
    let pad_left = (steps * (-shifts.first).max(0) * r) as usize;
    let pad_right = (steps * shifts.last().max(0) * r) as usize;
    let len = ks.kernel_len() + pad_left + pad_right;
    let mut h: Vec<Vec<f64>> = ks
        .kernels
        .iter()
        .map(|k| {
            let mut v = vec![0.0; len];
            v[pad_left..pad_left + k.len()].copy_from_slice(k);
            v
        })
        .collect();

    let max_norm = ks.energies().into_iter().fold(0.0f64, f64::max).sqrt();
    let mut lambda: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let n = shifts.count;
    let mut family: Vec<usize> = Vec::new();

    for (s, &p) in order.iter().enumerate() {
        let remaining = &order[s + 1..];
        let norm = h[p].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= ZERO_PIVOT_RTOL * max_norm {
            return Err(Error::ZeroPivot { pivot: p });
        }
        family.push(p);
        if remaining.is_empty() {
            break;
        }

        let cols = family.len() * n;
        let mut a = DMatrix::<f64>::zeros(len, cols);
        for (fi, &pf) in family.iter().enumerate() {
            for (j, shift) in shifts.iter().enumerate() {
                let off = shift * r;
                let col = fi * n + j;
                for (i, &v) in h[pf].iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    let t = i as i64 + off;
                    debug_assert!(t >= 0 && t < len as i64, "shifted pivot leaves the grid");
                    a[(t as usize, col)] = v;
                }
            }
        }
        let proj = Projector::new(a, p);
        let mut rhs = DMatrix::<f64>::zeros(len, remaining.len());
        for (c, &q) in remaining.iter().enumerate() {
            rhs.column_mut(c).copy_from_slice(&h[q]);
        }
        let mut coef = proj.solve(&rhs);
        let mut resid = &rhs - &proj.a * &coef;
        let refine = proj.solve(&resid);
        resid -= &proj.a * &refine;
        coef += refine;

        for (c, &q) in remaining.iter().enumerate() {
            h[q].copy_from_slice(resid.column(c).as_slice());
            for (fi, &pf) in family.iter().enumerate() {
                let entry = lambda.entry((pf, q)).or_insert_with(|| vec![0.0; n]);
                for (j, e) in entry.iter_mut().enumerate() {
                    *e += coef[(fi * n + j, c)];
                }
            }
        }
    }

    Ok(OrthoKernelSet {
        kernels: h,
        start_index: ks.start_index - pad_left as i64,
        grid: ks.grid,
        pivot_order: order,
        shifts,
        lambda,
    })
}

/// Raw product stream `x^{(m)}_k = a_k a_{k+m}`, zero past the end of the block.
pub fn product_stream(symbols: &[f64], m: usize) -> Vec<f64> {
    (0..symbols.len())
        .map(|k| symbols.get(k + m).map_or(0.0, |&b| symbols[k] * b))
        .collect()
}

/// Per-kernel symbol streams `b^{(q)}_k` of the orthogonal model.
#[derive(Debug, Clone, PartialEq)]
pub struct BStreams {
    /// Symbol index of the first entry of every stream.
    pub start: i64,
    /// `streams[q]` drives the orthogonal kernel `h_q`.
    pub streams: Vec<Vec<f64>>,
}

impl BStreams {
    pub fn get(&self, q: usize, k: i64) -> f64 {
        let i = k - self.start;
        if i < 0 {
            return 0.0;
        }
        self.streams[q].get(i as usize).copied().unwrap_or(0.0)
    }
}

/// Maps a symbol block to the streams of the orthogonal model.
///
/// Since `f_q = h_q + Σ_p Σ_n λ_n^{(p,q)} h_p(· − nR)` over the pivots `p`
/// processed before `q`, the stream of a pivot collects its own products plus
/// the shifted products of every kernel projected onto it:
/// `b^{(p)}_k = x^{(p)}_k + Σ_q Σ_n λ_n^{(p,q)} x^{(q)}_{k−n}`.
pub fn expand_b_streams(symbols: &[f64], oks: &OrthoKernelSet) -> Result<BStreams> {
    let m = oks.count();
    if symbols.len() < m {
        return Err(Error::Length(format!(
            "need at least {m} symbols for {m} kernels, got {}",
            symbols.len()
        )));
    }
    let n = symbols.len() as i64;
    let sh = oks.shifts;
    let start = sh.first.min(0);
    let end = (n - 1 + sh.last().max(0)) + 1;
    let width = (end - start) as usize;
    let raw: Vec<Vec<f64>> = (0..m).map(|q| product_stream(symbols, q)).collect();
    let mut streams = vec![vec![0.0; width]; m];
    for q in 0..m {
        for (k, &x) in raw[q].iter().enumerate() {
            streams[q][(k as i64 - start) as usize] = x;
        }
    }
    for (&(p, q), lam) in &oks.lambda {
        for (j, &l) in lam.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let shift = sh.first + j as i64;
            for (k, &x) in raw[q].iter().enumerate() {
                if x != 0.0 {
                    streams[p][(k as i64 + shift - start) as usize] += l * x;
                }
            }
        }
    }
    Ok(BStreams { start, streams })
}

/// Adds `Σ_k stream[k] · kernel(t − kT)` into `out` (which starts at `out_start`).
fn place(
    out: &mut [f64],
    out_start: i64,
    stream: &[f64],
    stream_start: i64,
    kernel: &[f64],
    kernel_start: i64,
    r: i64,
) {
    for (k, &b) in stream.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        let off = (stream_start + k as i64) * r + kernel_start - out_start;
        let off = off as usize;
        for (o, &h) in out[off..off + kernel.len()].iter_mut().zip(kernel) {
            *o += b * h;
        }
    }
}

fn check_truncation(u: usize, m: usize) -> Result<()> {
    if u < 1 || u > m {
        return Err(Error::Config(format!("truncation U = {u} must lie in 1..={m}")));
    }
    Ok(())
}

/// Truncated Volterra model `y^V_{(M,U)}` built from the first `U` raw kernels.
pub fn synthesize_volterra(symbols: &[f64], ks: &KernelSet, u: usize) -> Result<RealSignal> {
    check_truncation(u, ks.count())?;
    let r = ks.grid.samples_per_symbol as i64;
    let len = if symbols.is_empty() {
        0
    } else {
        (symbols.len() - 1) * r as usize + ks.kernel_len()
    };
    let mut out = vec![0.0; len];
    for m in 0..u {
        let x = product_stream(symbols, m);
        place(&mut out, ks.start_index, &x, 0, &ks.kernels[m], ks.start_index, r);
    }
    SampledSignal::new(out, ks.grid.sample_period(), ks.start_index)
}

/// Truncated orthogonal model `y^O_{(M,U)}` built from the first `U` kernels in pivot order.
pub fn synthesize_orthogonal(symbols: &[f64], oks: &OrthoKernelSet, u: usize) -> Result<RealSignal> {
    check_truncation(u, oks.count())?;
    let b = expand_b_streams(symbols, oks)?;
    let r = oks.grid.samples_per_symbol as i64;
    let width = b.streams[0].len();
    let out_start = b.start * r + oks.start_index;
    let len = (width - 1) * r as usize + oks.kernel_len();
    let mut out = vec![0.0; len];
    for &q in &oks.pivot_order[..u] {
        place(
            &mut out,
            out_start,
            &b.streams[q],
            b.start,
            &oks.kernels[q],
            oks.start_index,
            r,
        );
    }
    SampledSignal::new(out, oks.grid.sample_period(), out_start)
}

/// Signal-to-mean-square-error ratio `10·log10(Σ|y|² / Σ|y − ŷ|²)` in dB over
/// the union of both supports. Exact agreement yields `f64::INFINITY`.
pub fn smse(reference: &RealSignal, model: &RealSignal) -> Result<f64> {
    let from = reference.start_index().min(model.start_index());
    let to = reference.end_index().max(model.end_index());
    smse_window(reference, model, from, to)
}

/// [`smse`] restricted to absolute sample indices `[from, to)`.
pub fn smse_window(reference: &RealSignal, model: &RealSignal, from: i64, to: i64) -> Result<f64> {
    if (reference.sample_period() - model.sample_period()).abs() > 1e-12 * reference.sample_period() {
        return Err(Error::Config("signals are on different grids".into()));
    }
    let mut sig = 0.0;
    let mut err = 0.0;
    for i in from..to {
        let y = reference.at(i);
        let d = y - model.at(i);
        sig += y * y;
        err += d * d;
    }
    if sig == 0.0 {
        return Err(Error::ZeroReference);
    }
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (sig / err).log10())
}
