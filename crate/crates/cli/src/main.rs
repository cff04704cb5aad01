//! `imdd`: SMSE tables, BER sweeps, kernel dumps and μ-table training from a TOML config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use imdd_core::harness::{
    run_ber_sweep, run_kernel_dump, run_mu_training, run_smse_table, write_ber_csv, Experiment, Manifest,
};
use imdd_core::receiver::complexity_estimate;
use imdd_core::{Design, Error, ExperimentConfig};
use serde_json::json;

/// `println!` that ends the process quietly once stdout is closed (e.g. piped into `head`).
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

#[derive(Parser)]
#[command(
    name = "imdd",
    version,
    about = "IM/DD link simulator with Volterra-model MLSD receivers"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); omitted runs on built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// RNG seed (overrides sweep.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key override, e.g. `receiver.memory=6`; repeatable, last wins.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (overrides sweep.threads; 0 uses every core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Model accuracy of truncated Volterra and orthogonal models.
    Smse(Common),
    /// BER curves of the configured receiver designs.
    Ber {
        #[command(flatten)]
        common: Common,
        /// Restrict to these designs (nopf_mu, vpf_sigma, vpf_mu); repeatable.
        #[arg(long)]
        design: Vec<Design>,
        /// SNR grid in dB, comma separated (overrides sweep.snr_db).
        #[arg(long, value_delimiter = ',')]
        snr: Vec<f64>,
    },
    /// Raw and orthogonal kernels plus the projection table.
    Kernels(Common),
    /// Trains and exports a μ table.
    TrainMu {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "vpf_mu")]
        design: Design,
        /// Training SNR in dB; omitted trains noiselessly.
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Multiplications per detected symbol, U(L_MF + L_WF + A^L_VD).
    Complexity {
        #[arg(long, requires_all = ["lmf", "lwf", "a", "lvd"])]
        u: Option<u64>,
        #[arg(long)]
        lmf: Option<u64>,
        #[arg(long)]
        lwf: Option<u64>,
        #[arg(long)]
        a: Option<u64>,
        #[arg(long)]
        lvd: Option<u32>,
        /// Without explicit parameters, report the designs of this config.
        #[command(flatten)]
        common: Common,
    },
}

fn category(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config(_) | Error::Parse { .. } => ("config", 2),
        Error::Coverage { .. } => ("coverage", 3),
        Error::Io { .. } => ("io", 4),
        _ => ("model", 1),
    }
}

fn load(common: &Common, extra: &[String]) -> Result<ExperimentConfig, Error> {
    let mut ov = common.set.clone();
    ov.extend_from_slice(extra);
    if let Some(s) = common.seed {
        ov.push(format!("sweep.seed={s}"));
    }
    if let Some(t) = common.threads {
        ov.push(format!("sweep.threads={t}"));
    }
    match &common.config {
        Some(p) => ExperimentConfig::load(p, &ov),
        None => ExperimentConfig::from_toml_str("", &ov, Path::new("<defaults>")),
    }
}

fn out_dir(common: &Common) -> Result<&Path, Error> {
    std::fs::create_dir_all(&common.out).map_err(|source| Error::Io {
        path: common.out.clone(),
        source,
    })?;
    Ok(&common.out)
}

/// Complexity of each configured design.
fn complexities(cfg: &ExperimentConfig) -> Result<Vec<(Design, u64)>, Error> {
    let exp = Experiment::new(cfg)?;
    cfg.receiver
        .designs
        .iter()
        .map(|&d| Ok((d, exp.prepare(d)?.complexity())))
        .collect()
}

fn header(command: &str, common: &Common, cfg: &ExperimentConfig) -> Result<Vec<(Design, u64)>, Error> {
    let cx = complexities(cfg)?;
    let source = common
        .config
        .as_ref()
        .map_or("<defaults>".to_string(), |p| p.display().to_string());
    say!("# imdd {command}  config {source}  seed {}", cfg.sweep.seed);
    for (d, c) in &cx {
        say!("# {d}: {c} multiplications per symbol");
    }
    Ok(cx)
}

fn finish(
    command: &str,
    cfg: &ExperimentConfig,
    dir: &Path,
    outputs: Vec<PathBuf>,
    cx: &[(Design, u64)],
    notes: Vec<(&str, serde_json::Value)>,
) -> Result<(), Error> {
    let mut m = Manifest::new(command, cfg);
    m.outputs = outputs
        .iter()
        .map(|p| {
            p.file_name()
                .map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned())
        })
        .collect();
    m.notes.insert(
        "complexity".into(),
        json!(cx
            .iter()
            .map(|(d, c)| (d.name(), *c))
            .collect::<std::collections::BTreeMap<_, _>>()),
    );
    for (k, v) in notes {
        m.notes.insert(k.into(), v);
    }
    let path = dir.join(format!("{}.manifest.json", command.replace('-', "_")));
    m.write(&path)?;
    for o in &outputs {
        say!("wrote {}", o.display());
    }
    say!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Smse(common) => {
            let cfg = load(&common, &[])?;
            let cx = header("smse", &common, &cfg)?;
            let dir = out_dir(&common)?;
            let rep = run_smse_table(&cfg)?;
            for e in &rep.entries {
                say!("{:?} M={} U={} {:.4} dB", e.family, e.m, e.u, e.smse_db);
            }
            let csv = dir.join("smse.csv");
            rep.write_csv(&csv)?;
            finish(
                "smse",
                &cfg,
                dir,
                vec![csv],
                &cx,
                vec![("pivot_orders", json!(rep.pivot_orders))],
            )
        }
        Command::Ber { common, design, snr } => {
            let mut extra = Vec::new();
            if !design.is_empty() {
                let names: Vec<String> = design.iter().map(|d| format!("\"{}\"", d.name())).collect();
                extra.push(format!("receiver.designs=[{}]", names.join(",")));
            }
            if !snr.is_empty() {
                let vals: Vec<String> = snr.iter().map(|v| format!("{v:?}")).collect();
                extra.push(format!("sweep.snr_db=[{}]", vals.join(",")));
            }
            let cfg = load(&common, &extra)?;
            let cx = header("ber", &common, &cfg)?;
            let dir = out_dir(&common)?;
            let pts = run_ber_sweep(&cfg)?;
            say!("design,snr_db,bits,bit_errors,ber,ci_low,ci_high");
            for p in &pts {
                say!(
                    "{},{},{},{},{:.6e},{:.6e},{:.6e}{}",
                    p.design,
                    p.snr_db,
                    p.bits,
                    p.bit_errors,
                    p.ber,
                    p.ci_low,
                    p.ci_high,
                    if p.censored { "  (censored)" } else { "" }
                );
            }
            let csv = dir.join("ber.csv");
            write_ber_csv(&csv, &pts)?;
            let censored: Vec<_> = pts
                .iter()
                .filter(|p| p.censored)
                .map(|p| json!({"design": p.design.name(), "snr_db": p.snr_db}))
                .collect();
            let axis = match cfg.noise.domain {
                imdd_core::harness::NoiseDomain::Optical => "OSNR in dB over 12.5 GHz",
                imdd_core::harness::NoiseDomain::Electrical => "electrical SNR in dB over 12.5 GHz",
            };
            finish(
                "ber",
                &cfg,
                dir,
                vec![csv],
                &cx,
                vec![("censored", json!(censored)), ("snr_axis", json!(axis))],
            )
        }
        Command::Kernels(common) => {
            let cfg = load(&common, &[])?;
            let cx = header("kernels", &common, &cfg)?;
            let dir = out_dir(&common)?;
            let files = run_kernel_dump(&cfg, dir)?;
            finish(
                "kernels",
                &cfg,
                dir,
                vec![files.kernels, files.orthogonal, files.lambda, files.meta],
                &cx,
                Vec::new(),
            )
        }
        Command::TrainMu { common, design, snr } => {
            let extra = vec![format!("receiver.designs=[\"{}\"]", design.name())];
            let cfg = load(&common, &extra)?;
            let cx = header("train-mu", &common, &cfg)?;
            let dir = out_dir(&common)?;
            let table = run_mu_training(&cfg, design, snr)?;
            say!(
                "{} sequences, {} training symbols, delay {}",
                table.counts.len(),
                table.training_symbols,
                table.delay
            );
            let csv = dir.join("mu_table.csv");
            table.write_csv(&csv)?;
            finish(
                "train-mu",
                &cfg,
                dir,
                vec![csv],
                &cx,
                vec![("delay", json!(table.delay)), ("snr_db", json!(snr))],
            )
        }
        Command::Complexity {
            u,
            lmf,
            lwf,
            a,
            lvd,
            common,
        } => {
            if let (Some(u), Some(lmf), Some(lwf), Some(a), Some(lvd)) = (u, lmf, lwf, a, lvd) {
                say!("{}", complexity_estimate(u, lmf, lwf, a, lvd));
                return Ok(());
            }
            let cfg = load(&common, &[])?;
            for (d, c) in complexities(&cfg)? {
                say!("{d} {c}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (cat, code) = category(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{cat}]: {msg}");
            ExitCode::from(code)
        }
    }
}
