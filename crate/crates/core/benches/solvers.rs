//! Sequential against parallel execution.
//!
//! Batch drivers take an `Execution` argument, so both variants are measured
//! in one run. Per-cell loops are chosen at compile time; compare
//! `cargo bench` with `cargo bench --no-default-features` for those.

use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nlococ::{
    continuous_dependence, random_direction, random_feasible, sampled_variational_inequality,
    simulate, ControlPair, Execution, KernelSpec, KernelTable, ScalarField, Scenario,
};

const MODES: [(Execution, &str); 2] = [
    (Execution::Sequential, "sequential"),
    (Execution::Parallel, "parallel"),
];

fn small() -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.scn");
    let text = std::fs::read_to_string(&p)
        .unwrap()
        .replacen("cells = [32, 32]", "cells = [16, 16]", 1)
        .replacen("steps = 20", "steps = 8", 1);
    Scenario::parse(&text, p.parent().unwrap(), None).unwrap()
}

fn forward(c: &mut Criterion) {
    let sc = small();
    c.bench_function("simulate 16x16x8", |b| {
        b.iter(|| simulate(&sc.model, &sc.phi0, &sc.sigma0, &sc.controls, &sc.time).unwrap())
    });
    let grid = nlococ::GridSpec::rect(1.0, 1.0, 128, 128).unwrap();
    let table = KernelTable::build(KernelSpec::Gaussian { width: 0.1 }, &grid).unwrap();
    let f = ScalarField::from_fn(&grid, |x| (3.0 * x[0]).sin() * x[1]);
    c.bench_function("convolve 128x128", |b| {
        b.iter(|| table.convolve(&f).unwrap())
    });
}

fn batches(c: &mut Criterion) {
    let sc = small();
    let dir = random_direction(sc.grid(), &sc.time, 3);
    let deltas = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut g = c.benchmark_group("continuous dependence");
    g.sample_size(10);
    for (exec, name) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                continuous_dependence(
                    &sc.model,
                    &sc.phi0,
                    &sc.sigma0,
                    &sc.controls,
                    &dir,
                    &sc.time,
                    &deltas,
                    exec,
                )
                .unwrap()
            })
        });
    }
    g.finish();

    let dt = sc.time.dt();
    let cfg = sc.optimizer.projection();
    let x = random_feasible(&sc.sets, dt, &cfg, 1).unwrap();
    let grad = ControlPair::constant(sc.grid(), &sc.time, 1.0, -1.0);
    let mut g = c.benchmark_group("sampled variational inequality");
    g.sample_size(10);
    for (exec, name) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                sampled_variational_inequality(&x, &grad, &sc.sets, dt, &cfg, 16, 9, exec).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, batches);
criterion_main!(benches);
