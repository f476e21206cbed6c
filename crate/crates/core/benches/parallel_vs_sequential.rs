//! Hot loops under sequential and rayon execution. Build with
//! `--no-default-features` to see the fallback alone; both arms then run
//! sequentially.

use std::hint::black_box;

use alprio_core::acquire::{score_pool_with, AcquisitionConfig};
use alprio_core::featurize::{assemble, RepresentationMode};
use alprio_core::par::Execution;
use alprio_core::stats::{bootstrap_ci_with, loo_evaluate_with, spearman};
use alprio_core::surrogate::{FitConfig, GpPosterior};
use alprio_core::synthetic;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_all(c: &mut Criterion) {
    let lib = synthetic::library(5_000, 6, 0);
    let profiles = synthetic::profiles(&lib, 0, 10);
    let ids: Vec<String> = lib.ids().map(String::from).collect();
    let train: Vec<String> = ids[..36].to_vec();
    let pool: Vec<String> = ids[36..].to_vec();
    let results: Vec<_> = train
        .iter()
        .map(|id| synthetic::result(id, 0, synthetic::noisy_response(0, 1, id, 0.01)))
        .collect();
    let y: Vec<f64> = results.iter().map(|r| r.delta_rel).collect();
    let mols: Vec<_> = lib.records().iter().collect();
    let fm = assemble(&mols, &profiles, RepresentationMode::Hybrid, &train).unwrap();
    let x = fm.rows_for(&train).unwrap();
    let gp = GpPosterior::fit(&x, &y, &FitConfig::default()).unwrap();
    let acq = AcquisitionConfig::default();

    let mut g = c.benchmark_group("score_pool_4964");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| score_pool_with(exec, &gp, &fm, black_box(&pool), &acq, false).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("gp_fit_5_restarts");
    g.sample_size(20);
    for (name, exec) in MODES {
        let cfg = FitConfig {
            execution: exec,
            ..FitConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| GpPosterior::fit(black_box(&x), &y, &cfg).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("loo_36");
    g.sample_size(10);
    for (name, exec) in MODES {
        // restarts stay sequential so only the fold loop differs
        let cfg = FitConfig {
            execution: Execution::Sequential,
            ..FitConfig::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                loo_evaluate_with(exec, &lib, &profiles, &results, RepresentationMode::Hybrid, &cfg, 0.2).unwrap()
            })
        });
    }
    g.finish();

    let truth: Vec<f64> = y.clone();
    let pred: Vec<f64> = gp.predict_with(Execution::Sequential, &x, false).unwrap().iter().map(|p| p.mu).collect();
    let metric = |idx: &[usize]| {
        let a: Vec<f64> = idx.iter().map(|&i| truth[i]).collect();
        let b: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        spearman(&a, &b).ok()
    };
    let mut g = c.benchmark_group("bootstrap_spearman_10000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| bootstrap_ci_with(exec, truth.len(), metric, 10_000, 0).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_all);
criterion_main!(benches);
