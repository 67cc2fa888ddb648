//! End-to-end benchmarks for the analysis pipeline and the simulator.
//!
//! Run with `cargo bench -p aoi-bench`. Sample sizes are kept small because
//! individual iterations are substantial (full fixed-point solves and
//! simulation slices), not microseconds.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use aoi_core::{
    analyze, build_age_threshold_aloha, reference_params, simulate, stationary_distribution,
    AnalysisSettings, ProtocolSpec, ReferenceKind, SimConfig,
};

fn lbop_spec(n: u32) -> ProtocolSpec {
    build_age_threshold_aloha(&reference_params(ReferenceKind::Lbop, n).unwrap()).unwrap()
}

fn bench_analyze(c: &mut Criterion) {
    for n in [25u32, 100] {
        let spec = lbop_spec(n);
        let settings = AnalysisSettings::new(n);
        c.bench_function(&format!("analyze_lbop_n{n}"), |b| {
            b.iter(|| analyze(black_box(&spec), black_box(&settings)).unwrap())
        });
    }
}

fn bench_stationary(c: &mut Criterion) {
    // One dense mixed-dynamics matrix at a representative load.
    let spec = lbop_spec(100);
    let s = spec.num_states;
    let (g0, g1) = (0.5, 0.5);
    let p: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| g0 * spec.m0[i][j] + g1 * spec.m1[i][j])
                .collect()
        })
        .collect();
    let mut start = vec![0.0; s];
    start[0] = 1.0;
    c.bench_function("stationary_s222", |b| {
        b.iter(|| stationary_distribution(black_box(&p), black_box(&start), 1e-12).unwrap())
    });
}

fn bench_simulate(c: &mut Criterion) {
    let spec = lbop_spec(25);
    let config = SimConfig {
        num_users: 25,
        horizon: 20_000,
        num_runs: 2,
        seed: 0,
    };
    c.bench_function("simulate_n25_2x20k", |b| {
        b.iter(|| simulate(black_box(&spec), black_box(&config)).unwrap())
    });
}

fn config() -> Criterion {
    Criterion::default().sample_size(10)
}

criterion_group! {
    name = benches;
    config = config();
    targets = bench_analyze, bench_stationary, bench_simulate
}
criterion_main!(benches);
