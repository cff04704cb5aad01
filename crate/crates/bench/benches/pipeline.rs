use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use imdd_core::harness::{block_rng, Experiment, ExperimentConfig};
use imdd_core::receiver::{viterbi, EmissionTable, TrellisSpec};
use imdd_core::volterra::{extract_kernels, orthogonalize};
use imdd_core::Design;
use rand::Rng;

fn config() -> ExperimentConfig {
    let ov = vec!["model.whitening_taps=31".to_string()];
    ExperimentConfig::from_toml_str("", &ov, Path::new("<bench>")).unwrap()
}

fn kernels(c: &mut Criterion) {
    let cfg = config();
    let link = cfg.link.resolve().unwrap();
    c.bench_function("extract_kernels_m5", |b| {
        b.iter(|| extract_kernels(black_box(&link), 5).unwrap())
    });
    let ks = extract_kernels(&link, 5).unwrap();
    let order = cfg.model.pivot_order();
    c.bench_function("orthogonalize_m5", |b| {
        b.iter(|| orthogonalize(black_box(&ks), &order, None).unwrap())
    });
}

fn trellis(c: &mut Criterion) {
    let mut rng = block_rng(3, 0, 0, 0);
    for memory in [5usize, 7] {
        let spec = TrellisSpec::new(2, memory).unwrap();
        let values: Vec<f64> = (0..spec.branches()).map(|_| rng.random::<f64>()).collect();
        let table = EmissionTable::new(spec, 1, values).unwrap();
        let obs: Vec<f64> = (0..4096).map(|_| rng.random::<f64>()).collect();
        c.bench_function(&format!("viterbi_ook_l{memory}_4096"), |b| {
            b.iter(|| viterbi(black_box(&obs), &table, 40, None).unwrap())
        });
    }
}

fn link(c: &mut Criterion) {
    let cfg = config();
    let exp = Experiment::new(&cfg).unwrap();
    let rx = exp.prepare(Design::VpfSigma).unwrap();
    let n = 2048;
    let mut rng = block_rng(5, 0, 0, 0);
    let sym = exp.sim.random_symbols(n, &mut rng);
    c.bench_function("propagate_detect_2048", |b| {
        b.iter_batched(
            || block_rng(5, 0, 0, 1),
            |mut r| {
                let y = exp.sim.receive(&sym, Some(24.0), &mut r);
                rx.detect(&y, n, None).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels, trellis, link
}
criterion_main!(benches);
