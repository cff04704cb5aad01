use std::path::Path;

use imdd_core::harness::{
    block_rng, run_ber_sweep, run_mu_training, run_smse_table, write_ber_csv, Experiment, ExperimentConfig, Family,
};
use imdd_core::receiver::{Design, MuAccumulator, MuTable};
use imdd_core::Error;

fn config(ov: &[&str]) -> ExperimentConfig {
    let ov: Vec<String> = ov.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::from_toml_str("", &ov, Path::new("<test>")).unwrap()
}

fn quick(extra: &[&str]) -> ExperimentConfig {
    let mut ov = vec![
        "sweep.snr_db=[22, 26]",
        "sweep.max_symbols=20000",
        "sweep.block_symbols=2048",
        "sweep.batch_blocks=4",
        "model.whitening_taps=31",
    ];
    ov.extend_from_slice(extra);
    config(&ov)
}

#[test]
fn identical_seed_gives_identical_points() {
    let a = run_ber_sweep(&quick(&["sweep.threads=1"])).unwrap();
    let b = run_ber_sweep(&quick(&["sweep.threads=1"])).unwrap();
    let c = run_ber_sweep(&quick(&["sweep.threads=3"])).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c, "worker count must not change results");
    let d = run_ber_sweep(&quick(&["sweep.seed=99"])).unwrap();
    assert_ne!(a, d);
}

#[test]
fn every_point_meets_the_stopping_rule() {
    let cfg = quick(&["sweep.snr_db=[20, 24, 30]"]);
    let pts = run_ber_sweep(&cfg).unwrap();
    assert_eq!(pts.len(), 9);
    for p in &pts {
        assert_eq!(p.ber, p.bit_errors as f64 / p.bits as f64);
        assert!(p.ci_low <= p.ber && p.ber <= p.ci_high);
        if p.censored {
            assert!(p.bit_errors < cfg.sweep.min_errors);
            assert!(p.bits >= cfg.sweep.max_symbols);
        } else {
            assert!(p.bit_errors >= cfg.sweep.min_errors);
        }
    }
}

#[test]
fn noiseless_sweep_has_zero_ber() {
    let pts = run_ber_sweep(&quick(&["noise.enabled=false"])).unwrap();
    assert!(pts.iter().all(|p| p.bit_errors == 0 && p.bits > 0));
}

#[test]
fn ber_csv_has_the_seven_columns() {
    let pts = run_ber_sweep(&quick(&["noise.enabled=false", "receiver.designs=[\"vpf_sigma\"]"])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ber.csv");
    write_ber_csv(&path, &pts).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("design,snr_db,bits,bit_errors,ber,ci_low,ci_high"));
    assert_eq!(lines.count(), pts.len());
}

#[test]
fn short_training_is_a_coverage_error() {
    let cfg = quick(&["receiver.training_symbols=20"]);
    match run_mu_training(&cfg, Design::VpfMu, Some(24.0)) {
        Err(Error::Coverage {
            missing,
            total,
            suggested_training,
            ..
        }) => {
            assert_eq!(total, 32);
            assert!(missing > 0);
            assert!(suggested_training >= 64 * 32);
        }
        other => panic!("expected a coverage error, got {other:?}"),
    }
    assert!(run_mu_training(&cfg, Design::VpfSigma, None).is_err());
}

#[test]
fn trained_table_survives_csv_export() {
    let cfg = quick(&[]);
    let table = run_mu_training(&cfg, Design::VpfMu, Some(26.0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mu.csv");
    table.write_csv(&path).unwrap();
    let back = MuTable::read_csv(&path, table.trellis, table.delay).unwrap();
    assert_eq!(back.means, table.means);
    assert_eq!(back.counts, table.counts);
}

/// Noisy training means stay within three standard errors of the noiseless
/// means over the same symbols.
#[test]
fn noisy_mu_means_are_unbiased() {
    let cfg = quick(&[]);
    let exp = Experiment::new(&cfg).unwrap();
    let rx = exp.prepare(Design::VpfMu).unwrap();
    let k = cfg.training_symbols().unwrap();
    let mut rng = block_rng(7, 1, 0, 0);
    let sym = exp.sim.random_symbols(k + 200, &mut rng);
    let clean = rx.observe(&exp.sim.receive(&sym, None, &mut rng), 0, sym.len() as i64);
    let noisy = rx.observe(&exp.sim.receive(&sym, Some(24.0), &mut rng), 0, sym.len() as i64);

    let mut acc = MuAccumulator::new(rx.trellis, 1);
    acc.add(&sym, &clean, 100, 100 + k).unwrap();
    let reference = acc.finish().unwrap();
    let d = reference.delay;

    let windows = rx.trellis.windows(&sym);
    let nw = rx.trellis.branches();
    let (mut sum, mut sq, mut n) = (vec![0.0; nw], vec![0.0; nw], vec![0usize; nw]);
    for t in 100..100 + k {
        let w = windows[t].unwrap();
        let e = noisy[0].at(t as i64 - d) - clean[0].at(t as i64 - d);
        sum[w] += e;
        sq[w] += e * e;
        n[w] += 1;
    }
    for w in 0..nw {
        assert!(n[w] >= 2, "window {w} seen {} times", n[w]);
        let nf = n[w] as f64;
        let mean = sum[w] / nf;
        let var = (sq[w] - nf * mean * mean) / (nf - 1.0);
        let se = (var / nf).sqrt();
        assert!(
            mean.abs() <= 3.0 * se,
            "window {w}: bias {mean:.3e}, standard error {se:.3e}"
        );
    }
}

#[test]
fn smse_diagonal_agrees_across_families() {
    let cfg = config(&[
        "link.dispersion_ps_per_nm=600",
        "link.symbol_rate_ghz=35.5",
        "smse.kernel_counts=[3]",
        "smse.block_symbols=1024",
    ]);
    let rep = run_smse_table(&cfg).unwrap();
    assert_eq!(rep.entries.len(), 6);
    let v = rep.get(Family::V, 3, 3).unwrap();
    let o = rep.get(Family::O, 3, 3).unwrap();
    assert!((v - o).abs() <= 1e-6, "{v} vs {o}");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("smse.csv");
    rep.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("family,M,U,smse_db\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn overrides_reject_unknown_keys_before_running() {
    let err = ExperimentConfig::from_toml_str("", &["sweep.bogus=1".into()], Path::new("<test>")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. } | Error::Config(_)), "{err}");
}
