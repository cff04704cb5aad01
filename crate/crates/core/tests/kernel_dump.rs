use imdd_core::harness::{read_kernel_dump, run_kernel_dump, ExperimentConfig, KernelDump};
use std::path::Path;

fn smse_config() -> ExperimentConfig {
    let ov: Vec<String> = [
        "link.dispersion_ps_per_nm=600",
        "link.symbol_rate_ghz=35.5",
        "model.kernels=5",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    ExperimentConfig::from_toml_str("", &ov, Path::new("<test>")).unwrap()
}

#[test]
fn dump_round_trips_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smse_config();
    let files = run_kernel_dump(&cfg, dir.path()).unwrap();
    assert_eq!(files, KernelDump::in_dir(dir.path()));
    let (ks, oks) = read_kernel_dump(dir.path()).unwrap();

    let link = cfg.link.resolve().unwrap();
    let ks0 = imdd_core::volterra::extract_kernels(&link, 5).unwrap();
    let oks0 = imdd_core::volterra::orthogonalize(&ks0, &cfg.model.pivot_order(), None).unwrap();
    assert_eq!(ks.start_index(), ks0.start_index());
    assert_eq!(oks.start_index(), oks0.start_index());
    assert_eq!(oks.pivot_order(), oks0.pivot_order());
    assert_eq!(oks.shifts(), oks0.shifts());
    for q in 0..5 {
        assert_eq!(ks.samples(q), ks0.samples(q), "raw kernel {q}");
        assert_eq!(oks.samples(q), oks0.samples(q), "orthogonal kernel {q}");
    }
    assert_eq!(oks.lambda_table(), oks0.lambda_table());

    // a second dump of the re-read model is byte-identical
    let again = tempfile::tempdir().unwrap();
    imdd_core::harness::write_kernel_dump(again.path(), &ks, &oks).unwrap();
    for name in ["kernels.csv", "orthogonal_kernels.csv", "lambda.csv", "kernels.json"] {
        let a = std::fs::read(dir.path().join(name)).unwrap();
        let b = std::fs::read(again.path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn exported_f0_is_non_negative() {
    let dir = tempfile::tempdir().unwrap();
    let files = run_kernel_dump(&smse_config(), dir.path()).unwrap();
    let mut rdr = csv::Reader::from_path(&files.kernels).unwrap();
    assert_eq!(rdr.headers().unwrap().get(1), Some("f0"));
    let mut rows = 0;
    for rec in rdr.records() {
        let v: f64 = rec.unwrap()[1].parse().unwrap();
        assert!(v >= 0.0);
        rows += 1;
    }
    assert!(rows > 100);
}

#[test]
fn reloaded_lambda_table_reverifies_orthogonality() {
    let dir = tempfile::tempdir().unwrap();
    run_kernel_dump(&smse_config(), dir.path()).unwrap();
    let (ks, oks) = read_kernel_dump(dir.path()).unwrap();
    assert!(oks.max_orthogonality_residual() <= 1e-8);

    // rebuild every raw kernel from the orthogonal ones and the exported λ
    let r = ks.grid().samples_per_symbol as i64;
    let first = oks.shifts().first;
    let order = oks.pivot_order().to_vec();
    for (s, &q) in order.iter().enumerate() {
        let mut rebuilt: Vec<f64> = oks.samples(q).to_vec();
        let off = oks.start_index();
        for &p in &order[..s] {
            let lam = oks.lambda(p, q).expect("earlier pivot has coefficients");
            let hp = oks.samples(p);
            for (j, l) in lam.iter().enumerate() {
                let n = first + j as i64;
                for (i, v) in rebuilt.iter_mut().enumerate() {
                    let src = i as i64 - n * r;
                    if src >= 0 && (src as usize) < hp.len() {
                        *v += l * hp[src as usize];
                    }
                }
            }
        }
        let f = ks.samples(q);
        let peak = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, v) in rebuilt.iter().enumerate() {
            let idx = off + i as i64;
            let want = if idx >= ks.start_index() && idx < ks.start_index() + f.len() as i64 {
                f[(idx - ks.start_index()) as usize]
            } else {
                0.0
            };
            assert!((v - want).abs() <= 1e-9 * peak, "kernel {q} at {idx}: {v} vs {want}");
        }
    }
}

#[test]
fn orthogonal_energies_compress_along_pivot_order() {
    let cfg = smse_config();
    let link = cfg.link.resolve().unwrap();
    let ks = imdd_core::volterra::extract_kernels(&link, 5).unwrap();
    let oks = imdd_core::volterra::orthogonalize(&ks, &cfg.model.pivot_order(), None).unwrap();
    let e = oks.energies_in_pivot_order();
    // residual energies near round-off may tie; allow that slack
    let slack = 1e-12 * e[0];
    for w in e.windows(2) {
        assert!(w[1] <= w[0] + slack, "{e:?}");
    }
}

#[test]
fn missing_dump_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let err = read_kernel_dump(&dir.path().join("absent")).unwrap_err();
    assert!(err.to_string().contains("absent"), "{err}");
}
