//! Sequential versus rayon execution of the data-parallel hot paths.

#[path = "../tests/common/mod.rs"]
mod common;

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use s2g::amr::AmrGraph;
use s2g::decode::evaluate;
use s2g::evalkit::{corpus_smatch, DEFAULT_RESTARTS};
use s2g::par::Execution;
use s2g::train::{batch_gradients, derive_seed};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench(c: &mut Criterion) {
    let records = common::records("graphs50.amr");
    let config = common::overfit_config("");
    let (model, examples) = common::build_model(&records, config);
    let batch: Vec<_> = examples.iter().take(32).collect();
    let seeds: Vec<u64> = (0..batch.len() as u64).map(|i| derive_seed(1, 0, i)).collect();

    let mut group = c.benchmark_group("batch_gradients");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| batch_gradients(&model, black_box(&batch), &seeds, mode).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| evaluate(&model, black_box(&examples), 1, mode))
        });
    }
    group.finish();

    let gold: Vec<AmrGraph> = records.iter().filter_map(|r| r.graph.clone()).collect();
    let system: Vec<AmrGraph> = gold.iter().rev().cloned().collect();
    let mut group = c.benchmark_group("corpus_smatch");
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| corpus_smatch(black_box(&system), &gold, DEFAULT_RESTARTS, 1, mode))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
