//! Monte-Carlo experiments: SMSE tables, BER sweeps and kernel dumps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{dispersed_pulse, photodetect, propagate_with, Constellation, LinkConfig, Modulation};
use crate::error::{Error, Result};
use crate::receiver::{
    build_branch_filters, complexity_estimate, sigma_model, viterbi_mu, viterbi_sigma, BranchFilters, Design,
    MuAccumulator, MuTable, SigmaModel, SymbolSampler, SymbolSeq, TrellisSpec,
};
use crate::signal::{add_awgn_with, add_real_awgn_with, GridSpec, RealSignal, SampledSignal};
use crate::volterra::{
    extract_kernels, orthogonalize, smse_window, synthesize_orthogonal, synthesize_volterra, KernelSet, OrthoKernelSet,
    PivotOrder, ShiftSpec,
};

/// Reference bandwidth of the SNR axis, 12.5 GHz (0.1 nm at 1550 nm).
pub const REFERENCE_BANDWIDTH: f64 = 12.5e9;

/// 97.5% standard normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

const STREAM_PAYLOAD: u64 = 0;
const STREAM_TRAINING: u64 = 1;
const STREAM_SETUP: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub wavelength_nm: f64,
    pub dispersion_ps_per_nm: f64,
    pub pulse_width_ps: f64,
    pub symbol_rate_ghz: f64,
    pub samples_per_symbol: usize,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            wavelength_nm: 1550.0,
            dispersion_ps_per_nm: 800.0,
            pulse_width_ps: 36.0,
            symbol_rate_ghz: 28.0,
            samples_per_symbol: 8,
        }
    }
}

impl LinkSection {
    pub fn resolve(&self) -> Result<LinkConfig> {
        LinkConfig::from_units(
            self.wavelength_nm,
            self.dispersion_ps_per_nm,
            self.pulse_width_ps,
            self.symbol_rate_ghz,
            self.samples_per_symbol,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Kernel count M.
    pub kernels: usize,
    /// Receiver branches U (orthogonal kernels kept, in pivot order).
    pub branches: usize,
    /// Explicit pivot order; empty selects energy-descending.
    pub pivot_order: Vec<usize>,
    /// First symbol shift of the projection family; omitted spans the kernel support.
    pub shift_first: Option<i64>,
    pub shift_count: Option<usize>,
    pub whitening_taps: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kernels: 5,
            branches: 1,
            pivot_order: Vec::new(),
            shift_first: None,
            shift_count: None,
            whitening_taps: 15,
        }
    }
}

impl ModelSection {
    pub fn pivot_order(&self) -> PivotOrder {
        if self.pivot_order.is_empty() {
            PivotOrder::EnergyDescending
        } else {
            PivotOrder::Explicit(self.pivot_order.clone())
        }
    }

    pub fn shifts(&self) -> Result<Option<ShiftSpec>> {
        match (self.shift_first, self.shift_count) {
            (None, None) => Ok(None),
            (Some(first), Some(count)) => Ok(Some(ShiftSpec { first, count })),
            _ => Err(Error::Config(
                "model.shift_first and model.shift_count must be given together".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverSection {
    pub designs: Vec<Design>,
    /// Viterbi memory L_VD in symbols.
    pub memory: usize,
    /// Traceback depth; omitted uses 5·L_VD.
    pub traceback: Option<usize>,
    /// μ training length K; omitted uses 64·A^{L_VD}.
    pub training_symbols: Option<usize>,
}

impl Default for ReceiverSection {
    fn default() -> Self {
        Self {
            designs: Design::ALL.to_vec(),
            memory: 5,
            traceback: None,
            training_symbols: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDomain {
    /// ASE added to the field before the photodiode; `snr_db` is OSNR.
    Optical,
    /// Gaussian noise added to the photocurrent.
    Electrical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub enabled: bool,
    pub domain: NoiseDomain,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            enabled: true,
            domain: NoiseDomain::Optical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub constellation: Modulation,
    /// SNR grid in dB (OSNR over 12.5 GHz in the optical domain).
    pub snr_db: Vec<f64>,
    pub min_errors: u64,
    pub max_symbols: u64,
    pub block_symbols: usize,
    /// Symbols excluded at each block edge; omitted derives it from the channel and trellis.
    pub edge_symbols: Option<usize>,
    /// Blocks simulated between two stopping checks.
    pub batch_blocks: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            constellation: Modulation::Ook,
            snr_db: vec![10.0, 12.0, 14.0, 16.0, 18.0],
            min_errors: 100,
            max_symbols: 1_000_000,
            block_symbols: 4096,
            edge_symbols: None,
            batch_blocks: 8,
            seed: 1,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmseSection {
    pub kernel_counts: Vec<usize>,
    pub block_symbols: usize,
}

impl Default for SmseSection {
    fn default() -> Self {
        Self {
            kernel_counts: vec![3, 4, 5],
            block_symbols: 4096,
        }
    }
}

/// Everything an experiment needs, loaded from a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub link: LinkSection,
    pub model: ModelSection,
    pub receiver: ReceiverSection,
    pub noise: NoiseSection,
    pub sweep: SweepSection,
    pub smse: SmseSection,
}

impl ExperimentConfig {
    /// Parses TOML text after applying `key=value` overrides with dotted keys (last wins).
    pub fn from_toml_str(text: &str, overrides: &[String], origin: &Path) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| Error::parse(origin, e))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse(origin, e.to_string().trim()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.link.resolve()?;
        let m = &self.model;
        if m.kernels < 1 {
            return Err(Error::Config("model.kernels must be at least 1".into()));
        }
        if m.branches < 1 || m.branches > m.kernels {
            return Err(Error::Config(format!(
                "model.branches = {} must lie in 1..={}",
                m.branches, m.kernels
            )));
        }
        if m.whitening_taps < 1 {
            return Err(Error::Config("model.whitening_taps must be at least 1".into()));
        }
        m.shifts()?;
        let tr = self.trellis()?;
        if let Some(tb) = self.receiver.traceback {
            if tb < 5 * tr.memory {
                return Err(Error::Config(format!(
                    "receiver.traceback = {tb} is below 5·memory = {}",
                    5 * tr.memory
                )));
            }
        }
        if self.receiver.designs.is_empty() {
            return Err(Error::Config("receiver.designs is empty".into()));
        }
        let s = &self.sweep;
        if s.block_symbols < 16 || s.batch_blocks < 1 {
            return Err(Error::Config(
                "sweep.block_symbols ≥ 16 and sweep.batch_blocks ≥ 1 required".into(),
            ));
        }
        if s.snr_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep.snr_db entries must be finite".into()));
        }
        if s.min_errors < 100 {
            warn!(
                "sweep.min_errors = {} is below 100; confidence intervals will be wide",
                s.min_errors
            );
        }
        if self.smse.kernel_counts.iter().any(|&k| k < 1) || self.smse.block_symbols < 16 {
            return Err(Error::Config(
                "smse.kernel_counts ≥ 1 and smse.block_symbols ≥ 16 required".into(),
            ));
        }
        Ok(())
    }

    pub fn constellation(&self) -> Constellation {
        Constellation::new(self.sweep.constellation)
    }

    pub fn trellis(&self) -> Result<TrellisSpec> {
        TrellisSpec::new(self.constellation().size(), self.receiver.memory)
    }

    pub fn traceback(&self) -> usize {
        self.receiver.traceback.unwrap_or(5 * self.receiver.memory)
    }

    pub fn training_symbols(&self) -> Result<usize> {
        Ok(self
            .receiver
            .training_symbols
            .unwrap_or(64 * self.trellis()?.branches()))
    }
}

/// Sets `a.b.c = value` inside a TOML document; the value is parsed as TOML and
/// falls back to a bare string.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} descends into a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Independent random stream for `(seed, kind, point, block)`.
pub fn block_rng(seed: u64, kind: u64, point: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 62) ^ (point << 32) ^ block);
    rng
}

/// Transmitter, fiber, noise and photodiode for one link.
#[derive(Debug, Clone)]
pub struct LinkSimulator {
    pub link: LinkConfig,
    pub pulse: SampledSignal<Complex64>,
    pub constellation: Constellation,
    pub noise: NoiseSection,
}

impl LinkSimulator {
    pub fn new(link: LinkConfig, constellation: Constellation, noise: NoiseSection) -> Self {
        Self {
            pulse: dispersed_pulse(&link),
            link,
            constellation,
            noise,
        }
    }

    /// Channel memory in symbols spanned by the dispersed pulse.
    pub fn pulse_span_symbols(&self) -> usize {
        self.pulse.len().div_ceil(self.link.samples_per_symbol())
    }

    pub fn random_symbols<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let a = self.constellation.size();
        (0..n).map(|_| rng.random_range(0..a)).collect()
    }

    /// Photocurrent of a symbol block. With `snr_db = None` or noise disabled
    /// the output is noiseless. In the optical domain the ASE–ASE mean power
    /// is removed from the photocurrent.
    pub fn receive<R: Rng + ?Sized>(&self, symbols: &[usize], snr_db: Option<f64>, rng: &mut R) -> RealSignal {
        let amps = self.constellation.amplitudes(symbols);
        let mut field = propagate_with(&amps, &self.pulse, self.link.samples_per_symbol());
        let dt = self.link.sample_period();
        let snr = match (self.noise.enabled, snr_db) {
            (true, Some(db)) => 10f64.powf(db / 10.0),
            _ => return photodetect(&field),
        };
        match self.noise.domain {
            NoiseDomain::Optical => {
                let ps = field.samples().iter().map(|s| s.norm_sqr()).sum::<f64>() / field.len() as f64;
                let psd = ps / (snr * REFERENCE_BANDWIDTH);
                field = add_awgn_with(&field, psd, rng).expect("non-negative psd");
                let mut y = photodetect(&field);
                let ase = psd / dt;
                y.samples_mut().iter_mut().for_each(|v| *v -= ase);
                y
            }
            NoiseDomain::Electrical => {
                let mut y = photodetect(&field);
                let py = y.samples().iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
                add_real_awgn_with(y.samples_mut(), py / (snr * REFERENCE_BANDWIDTH * dt), rng);
                y
            }
        }
    }
}

/// Receiver front end and decoder of one design, ready for detection.
#[derive(Debug, Clone)]
pub struct PreparedReceiver {
    pub design: Design,
    pub trellis: TrellisSpec,
    pub traceback: usize,
    pub samples_per_symbol: usize,
    pub filters: Vec<BranchFilters>,
    pub sampler: Option<SymbolSampler>,
    pub sigma: Option<SigmaModel>,
}

impl PreparedReceiver {
    /// Symbol-rate observations `[from, to)` for each branch.
    pub fn observe(&self, y: &RealSignal, from: i64, to: i64) -> Vec<SymbolSeq> {
        match &self.sampler {
            Some(s) => vec![s.sample(y, from, to)],
            None => self
                .filters
                .iter()
                .map(|bf| bf.prefilter(y, self.samples_per_symbol, from, to))
                .collect(),
        }
    }

    /// Multiplications per detected symbol.
    pub fn complexity(&self) -> u64 {
        let a = self.trellis.alphabet as u64;
        let l = self.trellis.memory as u32;
        match &self.sampler {
            Some(_) => complexity_estimate(1, 0, 0, a, l),
            None => {
                let u = self.filters.len() as u64;
                let l_mf = self.filters.iter().map(|f| f.matched_len()).max().unwrap_or(0) as u64;
                let l_wf = self.filters.iter().map(|f| f.whitening.len()).max().unwrap_or(0) as u64;
                complexity_estimate(u, l_mf, l_wf, a, l)
            }
        }
    }

    /// Decodes a block whose photocurrent is `y`; `mu` is required for μ designs.
    pub fn detect(&self, y: &RealSignal, steps: usize, mu: Option<&MuTable>) -> Result<Vec<usize>> {
        let obs = self.observe(y, -(self.trellis.memory as i64), steps as i64);
        let out = match (self.design, mu) {
            (Design::VpfSigma, _) => viterbi_sigma(
                &obs,
                self.sigma.as_ref().expect("sigma model present"),
                0,
                steps,
                self.traceback,
                None,
            )?,
            (_, Some(table)) => viterbi_mu(&obs, table, 0, steps, self.traceback, None)?,
            (_, None) => return Err(Error::Config(format!("design {} needs a mu table", self.design))),
        };
        Ok(out.symbols)
    }
}

/// Shared model objects of an experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub sim: LinkSimulator,
    pub kernels: KernelSet,
    pub ortho: OrthoKernelSet,
    pub filters: Vec<BranchFilters>,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let link = config.link.resolve()?;
        let sim = LinkSimulator::new(link, config.constellation(), config.noise.clone());
        let kernels = extract_kernels(&link, config.model.kernels)?;
        let ortho = orthogonalize(&kernels, &config.model.pivot_order(), config.model.shifts()?)?;
        let filters = build_branch_filters(&ortho, config.model.branches, config.model.whitening_taps)?;
        Ok(Self {
            config: config.clone(),
            sim,
            kernels,
            ortho,
            filters,
        })
    }

    pub fn edge_symbols(&self) -> usize {
        self.config.sweep.edge_symbols.unwrap_or(
            self.config.traceback()
                + self.config.receiver.memory
                + self.sim.pulse_span_symbols()
                + self.config.model.kernels,
        )
    }

    pub fn prepare(&self, design: Design) -> Result<PreparedReceiver> {
        let trellis = self.config.trellis()?;
        let r = self.sim.link.samples_per_symbol();
        let mut rx = PreparedReceiver {
            design,
            trellis,
            traceback: self.config.traceback(),
            samples_per_symbol: r,
            filters: Vec::new(),
            sampler: None,
            sigma: None,
        };
        match design {
            Design::NopfMu => {
                let mut rng = block_rng(self.config.sweep.seed, STREAM_SETUP, 0, 0);
                let sym = self.sim.random_symbols(self.config.sweep.block_symbols, &mut rng);
                let y = self.sim.receive(&sym, None, &mut rng);
                rx.sampler = Some(SymbolSampler::at_peak_power(&y, r));
            }
            Design::VpfSigma => {
                rx.filters = self.filters.clone();
                let model = sigma_model(&self.ortho, &self.filters, &self.sim.constellation, trellis)?;
                debug!(
                    "sigma model: delay {} captures {:.6} of the composite energy",
                    model.delay, model.captured
                );
                rx.sigma = Some(model);
            }
            Design::VpfMu => rx.filters = self.filters.clone(),
        }
        Ok(rx)
    }

    /// Trains a μ table at one SNR point from `K` known symbols.
    pub fn train(&self, rx: &PreparedReceiver, point: usize, snr_db: Option<f64>) -> Result<MuTable> {
        let k = self.config.training_symbols()?;
        let n = self.config.sweep.block_symbols;
        let edge = self.edge_symbols();
        let usable = n.saturating_sub(2 * edge).max(1);
        let blocks = k.div_ceil(usable);
        let seed = self.config.sweep.seed;
        let parts: Vec<MuAccumulator> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = block_rng(seed, STREAM_TRAINING, point as u64, b as u64);
                let sym = self.sim.random_symbols(n, &mut rng);
                let y = self.sim.receive(&sym, snr_db, &mut rng);
                let obs = rx.observe(&y, 0, n as i64);
                let take = usable.min(k - b * usable);
                let mut acc = MuAccumulator::new(rx.trellis, obs.len());
                acc.add(&sym, &obs, edge, edge + take).expect("branch count matches");
                acc
            })
            .collect();
        let mut total = MuAccumulator::new(rx.trellis, rx.observe_branches());
        for p in parts {
            total.merge(p);
        }
        total.finish()
    }

    /// Bit errors and bits of one payload block.
    pub fn run_block(
        &self,
        rx: &PreparedReceiver,
        mu: Option<&MuTable>,
        point: usize,
        block: u64,
        snr_db: Option<f64>,
    ) -> Result<(u64, u64)> {
        let n = self.config.sweep.block_symbols;
        let edge = self.edge_symbols();
        let mut rng = block_rng(self.config.sweep.seed, STREAM_PAYLOAD, point as u64, block);
        let sym = self.sim.random_symbols(n, &mut rng);
        let y = self.sim.receive(&sym, snr_db, &mut rng);
        let det = rx.detect(&y, n, mu)?;
        let c = &self.sim.constellation;
        let mut errors = 0u64;
        let mut bits = 0u64;
        for t in edge..n.saturating_sub(edge) {
            errors += c.bit_errors(sym[t], det[t]) as u64;
            bits += c.bits_per_symbol as u64;
        }
        Ok((errors, bits))
    }

    /// Simulates one design at one SNR point until the stopping rule fires.
    pub fn run_point(&self, rx: &PreparedReceiver, point: usize, snr_db: f64) -> Result<BerPoint> {
        let snr = self.config.noise.enabled.then_some(snr_db);
        let mu = if rx.design.uses_mu() {
            Some(self.train(rx, point, snr)?)
        } else {
            None
        };
        let s = &self.config.sweep;
        let bps = self.sim.constellation.bits_per_symbol as u64;
        let max_bits = s.max_symbols.saturating_mul(bps);
        let (mut errors, mut bits) = (0u64, 0u64);
        let mut next = 0u64;
        while errors < s.min_errors && bits < max_bits {
            let batch: Vec<Result<(u64, u64)>> = (next..next + s.batch_blocks as u64)
                .into_par_iter()
                .map(|b| self.run_block(rx, mu.as_ref(), point, b, snr))
                .collect();
            next += s.batch_blocks as u64;
            for r in batch {
                let (e, n) = r?;
                errors += e;
                bits += n;
            }
            if bits == 0 {
                return Err(Error::Config("block edges leave no symbols to count".into()));
            }
        }
        let censored = errors < s.min_errors;
        Ok(BerPoint::new(rx.design, snr_db, bits, errors, censored))
    }
}

impl PreparedReceiver {
    fn observe_branches(&self) -> usize {
        if self.sampler.is_some() {
            1
        } else {
            self.filters.len()
        }
    }
}

/// One point of a BER curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub design: Design,
    pub snr_db: f64,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// The symbol budget ran out before `min_errors` errors were seen.
    pub censored: bool,
}

impl BerPoint {
    pub fn new(design: Design, snr_db: f64, bits: u64, bit_errors: u64, censored: bool) -> Self {
        let (ci_low, ci_high) = wilson_interval(bit_errors, bits);
        Self {
            design,
            snr_db,
            bits,
            bit_errors,
            ber: if bits == 0 {
                0.0
            } else {
                bit_errors as f64 / bits as f64
            },
            ci_low,
            ci_high,
            censored,
        }
    }
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z_95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

/// SNR at which `log10(BER)` crosses `log10(target)`, by linear interpolation
/// between neighbouring points of increasing SNR. `None` if the curve never crosses.
pub fn snr_at_ber(points: &[BerPoint], target: f64) -> Option<f64> {
    let mut pts: Vec<&BerPoint> = points.iter().filter(|p| p.bit_errors > 0).collect();
    pts.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    let lt = target.log10();
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (la, lb) = (a.ber.log10(), b.ber.log10());
        if la >= lt && lb <= lt {
            if la == lb {
                return Some(a.snr_db);
            }
            return Some(a.snr_db + (la - lt) / (la - lb) * (b.snr_db - a.snr_db));
        }
    }
    None
}

/// Worker pool honouring `sweep.threads`.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every configured design over the SNR grid.
pub fn run_ber_sweep(cfg: &ExperimentConfig) -> Result<Vec<BerPoint>> {
    let pool = thread_pool(cfg.sweep.threads)?;
    pool.install(|| {
        let exp = Experiment::new(cfg)?;
        let mut out = Vec::new();
        for &design in &cfg.receiver.designs {
            let rx = exp.prepare(design)?;
            info!("{design}: {} multiplications per symbol", rx.complexity());
            for (i, &snr) in cfg.sweep.snr_db.iter().enumerate() {
                let p = exp.run_point(&rx, i, snr)?;
                info!(
                    "{design} snr {snr:.2} dB: {} errors in {} bits, ber {:.3e}{}",
                    p.bit_errors,
                    p.bits,
                    p.ber,
                    if p.censored { " (censored)" } else { "" }
                );
                out.push(p);
            }
        }
        Ok(out)
    })
}

/// Trains a μ table for `design` at `snr_db` (ignored when noise is disabled).
pub fn run_mu_training(cfg: &ExperimentConfig, design: Design, snr_db: Option<f64>) -> Result<MuTable> {
    if !design.uses_mu() {
        return Err(Error::Config(format!("design {design} does not use a mu table")));
    }
    let pool = thread_pool(cfg.sweep.threads)?;
    pool.install(|| {
        let exp = Experiment::new(cfg)?;
        let rx = exp.prepare(design)?;
        exp.train(&rx, 0, snr_db.filter(|_| cfg.noise.enabled))
    })
}

pub fn write_ber_csv(path: &Path, points: &[BerPoint]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let err = |e: csv::Error| Error::parse(path, e);
    w.write_record(["design", "snr_db", "bits", "bit_errors", "ber", "ci_low", "ci_high"])
        .map_err(err)?;
    for p in points {
        w.write_record([
            p.design.name().to_string(),
            p.snr_db.to_string(),
            p.bits.to_string(),
            p.bit_errors.to_string(),
            p.ber.to_string(),
            p.ci_low.to_string(),
            p.ci_high.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Raw Volterra kernels.
    V,
    /// Orthogonal kernels.
    O,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmseEntry {
    pub family: Family,
    pub m: usize,
    pub u: usize,
    pub smse_db: f64,
}

/// SMSE of both model families over a grid of (M, U).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SmseReport {
    pub entries: Vec<SmseEntry>,
    /// Pivot order used for each M.
    pub pivot_orders: BTreeMap<usize, Vec<usize>>,
}

impl SmseReport {
    pub fn get(&self, family: Family, m: usize, u: usize) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.family == family && e.m == m && e.u == u)
            .map(|e| e.smse_db)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "family,M,U,smse_db").map_err(io)?;
        for e in &self.entries {
            writeln!(w, "{:?},{},{},{}", e.family, e.m, e.u, e.smse_db).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// SMSE of `y^V_{(M,U)}` and `y^O_{(M,U)}` against the exact photocurrent of a
/// random OOK block, for every configured M and every U ≤ M.
pub fn run_smse_table(cfg: &ExperimentConfig) -> Result<SmseReport> {
    cfg.validate()?;
    let link = cfg.link.resolve()?;
    let sim = LinkSimulator::new(
        link,
        Constellation::ook(),
        NoiseSection {
            enabled: false,
            ..cfg.noise.clone()
        },
    );
    let n = cfg.smse.block_symbols;
    let mut rng = block_rng(cfg.sweep.seed, STREAM_SETUP, 1, 0);
    let sym = sim.random_symbols(n, &mut rng);
    let amps = sim.constellation.amplitudes(&sym);
    let y = sim.receive(&sym, None, &mut rng);
    let r = link.samples_per_symbol() as i64;
    let mut report = SmseReport::default();
    for &m in &cfg.smse.kernel_counts {
        let ks = extract_kernels(&link, m)?;
        let order = if cfg.model.pivot_order.len() == m {
            cfg.model.pivot_order()
        } else {
            PivotOrder::EnergyDescending
        };
        let oks = orthogonalize(&ks, &order, cfg.model.shifts()?)?;
        let memory = ks.kernel_len().div_ceil(r as usize);
        let edge = (m + memory) as i64;
        if 2 * edge >= n as i64 {
            return Err(Error::Config(format!(
                "smse.block_symbols = {n} is too short for M = {m}"
            )));
        }
        let (from, to) = (edge * r, (n as i64 - edge) * r);
        for u in 1..=m {
            let v = smse_window(&y, &synthesize_volterra(&amps, &ks, u)?, from, to)?;
            let o = smse_window(&y, &synthesize_orthogonal(&amps, &oks, u)?, from, to)?;
            report.entries.push(SmseEntry {
                family: Family::V,
                m,
                u,
                smse_db: v,
            });
            report.entries.push(SmseEntry {
                family: Family::O,
                m,
                u,
                smse_db: o,
            });
        }
        report.pivot_orders.insert(m, oks.pivot_order().to_vec());
    }
    report.entries.sort_by_key(|a| (a.family, a.m, a.u));
    Ok(report)
}

/// Files written by [`run_kernel_dump`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDump {
    pub kernels: PathBuf,
    pub orthogonal: PathBuf,
    pub lambda: PathBuf,
    pub meta: PathBuf,
}

impl KernelDump {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            kernels: dir.join("kernels.csv"),
            orthogonal: dir.join("orthogonal_kernels.csv"),
            lambda: dir.join("lambda.csv"),
            meta: dir.join("kernels.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct KernelMeta {
    sample_period: f64,
    samples_per_symbol: usize,
    symbol_period: f64,
    kernel_start_index: i64,
    orthogonal_start_index: i64,
    pivot_order: Vec<usize>,
    shift_first: i64,
    shift_count: usize,
}

fn write_columns(path: &Path, prefix: &str, start: i64, columns: &[&[f64]]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = (0..columns.len()).map(|q| format!("{prefix}{q}")).collect();
    writeln!(w, "index,{}", header.join(",")).map_err(io)?;
    let len = columns.first().map_or(0, |c| c.len());
    for i in 0..len {
        write!(w, "{}", start + i as i64).map_err(io)?;
        for c in columns {
            write!(w, ",{}", c[i]).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_columns(path: &Path) -> Result<(i64, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let width = rdr.headers().map_err(|e| Error::parse(path, e))?.len();
    if width < 2 {
        return Err(Error::parse(path, "expected an index column and at least one kernel"));
    }
    let mut cols = vec![Vec::new(); width - 1];
    let mut start = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let idx: i64 = rec[0]
            .parse()
            .map_err(|e| Error::parse(path, format!("row {row}: {e}")))?;
        let s = *start.get_or_insert(idx);
        if idx != s + row as i64 {
            return Err(Error::parse(path, format!("row {row}: index {idx} is not contiguous")));
        }
        for (c, col) in cols.iter_mut().enumerate() {
            col.push(
                rec[c + 1]
                    .parse()
                    .map_err(|e| Error::parse(path, format!("row {row}: {e}")))?,
            );
        }
    }
    Ok((start.unwrap_or(0), cols))
}

/// Writes raw kernels, orthogonal kernels (one per column), the λ table and a JSON sidecar.
pub fn run_kernel_dump(cfg: &ExperimentConfig, dir: &Path) -> Result<KernelDump> {
    let exp_link = cfg.link.resolve()?;
    let ks = extract_kernels(&exp_link, cfg.model.kernels)?;
    let oks = orthogonalize(&ks, &cfg.model.pivot_order(), cfg.model.shifts()?)?;
    write_kernel_dump(dir, &ks, &oks)
}

pub fn write_kernel_dump(dir: &Path, ks: &KernelSet, oks: &OrthoKernelSet) -> Result<KernelDump> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = KernelDump::in_dir(dir);
    let raw: Vec<&[f64]> = (0..ks.count()).map(|q| ks.samples(q)).collect();
    write_columns(&files.kernels, "f", ks.start_index(), &raw)?;
    let orth: Vec<&[f64]> = (0..oks.count()).map(|q| oks.samples(q)).collect();
    write_columns(&files.orthogonal, "h", oks.start_index(), &orth)?;

    let file = std::fs::File::create(&files.lambda).map_err(|e| Error::io(&files.lambda, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(&files.lambda, e);
    writeln!(w, "pivot,kernel,shift,lambda").map_err(io)?;
    let first = oks.shifts().first;
    for (&(p, q), lam) in oks.lambda_table() {
        for (j, v) in lam.iter().enumerate() {
            writeln!(w, "{p},{q},{},{v}", first + j as i64).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    let grid = ks.grid();
    let meta = KernelMeta {
        sample_period: grid.sample_period(),
        samples_per_symbol: grid.samples_per_symbol,
        symbol_period: grid.symbol_period,
        kernel_start_index: ks.start_index(),
        orthogonal_start_index: oks.start_index(),
        pivot_order: oks.pivot_order().to_vec(),
        shift_first: oks.shifts().first,
        shift_count: oks.shifts().count,
    };
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&files.meta, text + "\n").map_err(|e| Error::io(&files.meta, e))?;
    Ok(files)
}

/// Reads back the files of [`write_kernel_dump`].
pub fn read_kernel_dump(dir: &Path) -> Result<(KernelSet, OrthoKernelSet)> {
    let files = KernelDump::in_dir(dir);
    let text = std::fs::read_to_string(&files.meta).map_err(|e| Error::io(&files.meta, e))?;
    let meta: KernelMeta = serde_json::from_str(&text).map_err(|e| Error::parse(&files.meta, e))?;
    let grid = GridSpec::new(meta.samples_per_symbol, meta.symbol_period)?;
    let (start, raw) = read_columns(&files.kernels)?;
    if start != meta.kernel_start_index {
        return Err(Error::parse(&files.kernels, "start index disagrees with kernels.json"));
    }
    let ks = KernelSet::new(raw, start, grid)?;
    let (ostart, orth) = read_columns(&files.orthogonal)?;
    let mut lambda: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(&files.lambda).map_err(|e| Error::parse(&files.lambda, e))?;
    for rec in rdr.deserialize() {
        let (p, q, shift, v): (usize, usize, i64, f64) = rec.map_err(|e| Error::parse(&files.lambda, e))?;
        let j = shift - meta.shift_first;
        if j < 0 || j as usize >= meta.shift_count {
            return Err(Error::parse(&files.lambda, format!("shift {shift} outside the family")));
        }
        lambda.entry((p, q)).or_insert_with(|| vec![0.0; meta.shift_count])[j as usize] = v;
    }
    let oks = OrthoKernelSet::from_parts(
        orth,
        ostart,
        grid,
        meta.pivot_order,
        ShiftSpec {
            first: meta.shift_first,
            count: meta.shift_count,
        },
        lambda,
    )?;
    Ok((ks, oks))
}

/// Run manifest written next to every result file.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    pub seed: u64,
    pub versions: BTreeMap<&'static str, &'static str>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub outputs: Vec<String>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &'a ExperimentConfig) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("imdd-core", env!("CARGO_PKG_VERSION"));
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            command,
            config,
            seed: config.sweep.seed,
            versions,
            timestamp,
            outputs: Vec::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str, ov: &[&str]) -> Result<ExperimentConfig> {
        let ov: Vec<String> = ov.iter().map(|s| s.to_string()).collect();
        ExperimentConfig::from_toml_str(text, &ov, Path::new("test.toml"))
    }

    #[test]
    fn empty_config_takes_defaults() {
        let c = cfg("", &[]).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.traceback(), 25);
        assert_eq!(c.training_symbols().unwrap(), 64 * 32);
    }

    #[test]
    fn overrides_apply_last_wins() {
        let c = cfg(
            "[link]\ndispersion_ps_per_nm = 600\n",
            &[
                "link.dispersion_ps_per_nm=0",
                "sweep.snr_db=[1, 2.5]",
                "link.dispersion_ps_per_nm = 700",
                "sweep.constellation=pam4",
            ],
        )
        .unwrap();
        assert_eq!(c.link.dispersion_ps_per_nm, 700.0);
        assert_eq!(c.sweep.snr_db, vec![1.0, 2.5]);
        assert_eq!(c.sweep.constellation, Modulation::Pam4);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(cfg("", &["link.colour=3"]), Err(Error::Parse { .. })));
        assert!(matches!(cfg("[nosuch]\na = 1\n", &[]), Err(Error::Parse { .. })));
        assert!(matches!(cfg("", &["novalue"]), Err(Error::Config(_))));
        assert!(cfg("", &["model.branches=7"]).is_err());
        assert!(cfg("", &["receiver.traceback=3"]).is_err());
    }

    #[test]
    fn wilson_interval_contains_estimate() {
        let (lo, hi) = wilson_interval(0, 1000);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.005);
        let (lo, hi) = wilson_interval(100, 100_000);
        assert!(lo < 1e-3 && hi > 1e-3);
        // textbook value for 10/100
        let (lo, hi) = wilson_interval(10, 100);
        assert!((lo - 0.0552).abs() < 1e-4 && (hi - 0.1744).abs() < 1e-4);
    }

    #[test]
    fn snr_interpolation() {
        let p = |snr, ber: f64| BerPoint::new(Design::VpfMu, snr, 1_000_000, (ber * 1e6) as u64, false);
        let pts = vec![p(10.0, 1e-2), p(12.0, 1e-4), p(8.0, 1e-1)];
        let s = snr_at_ber(&pts, 1e-3).unwrap();
        assert!((s - 11.0).abs() < 1e-9);
        assert!(snr_at_ber(&pts, 1e-6).is_none());
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = block_rng(7, STREAM_PAYLOAD, 0, 0);
        let mut b = block_rng(7, STREAM_PAYLOAD, 0, 1);
        let mut c = block_rng(7, STREAM_TRAINING, 0, 0);
        let x: u64 = a.random();
        assert_ne!(x, b.random::<u64>());
        assert_ne!(x, c.random::<u64>());
        assert_eq!(x, block_rng(7, STREAM_PAYLOAD, 0, 0).random::<u64>());
    }
}
