use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ntp_bench::{fixtures_dir, load};
use ntp_core::metrics::{collector_from_selection, StandardCollector};
use ntp_core::{build_model, gen_inputs, run_model, topology_cost, EngineConfig, MachineSpec, Precision, Uniform};

fn one_rep() -> EngineConfig {
    EngineConfig {
        reps: 1,
        warmup: 0,
        ..Default::default()
    }
}

/// Whole-graph runs of the small fixtures under each built-in collector.
fn collectors(c: &mut Criterion) {
    let mut g = c.benchmark_group("engine_collector");
    g.sample_size(10);
    for name in ["tiny-cnn.xml", "speech-frontend.xml"] {
        let graph = load(name).without_region();
        let model = build_model(&graph, 0, Precision::Fp32);
        let inputs = gen_inputs(&graph, 0, Uniform { lo: -1.0, hi: 1.0 });
        for selection in ["time", "time+alloc"] {
            g.bench_with_input(BenchmarkId::new(name, selection), &selection, |bench, selection| {
                bench.iter(|| {
                    let (mut collector, _) = collector_from_selection(selection).unwrap();
                    run_model(&model, &inputs, &one_rep(), collector.as_mut()).unwrap()
                })
            });
        }
    }
    g.finish();
}

fn storage_precision(c: &mut Criterion) {
    let graph = load("speech-frontend.xml");
    let inputs = gen_inputs(&graph, 0, Uniform { lo: -1.0, hi: 1.0 });
    let mut g = c.benchmark_group("engine_precision");
    g.sample_size(10);
    for p in [Precision::Fp32, Precision::Fp16, Precision::Int8] {
        let model = build_model(&graph, 0, p);
        g.bench_function(p.as_str(), |bench| {
            bench.iter(|| run_model(&model, &inputs, &one_rep(), &mut StandardCollector::time()).unwrap())
        });
    }
    g.finish();
}

fn model_build(c: &mut Criterion) {
    let graph = load("deepspeech-h512.xml");
    let mut g = c.benchmark_group("build_model");
    g.sample_size(10);
    g.bench_function("deepspeech-h512", |bench| bench.iter(|| build_model(&graph, 0, Precision::Fp32)));
    g.finish();
}

fn cost_model(c: &mut Criterion) {
    let graph = load("deepspeech.xml");
    let machine = MachineSpec::load(&fixtures_dir().join("machines/generic-cpu.json")).unwrap();
    c.bench_function("topology_cost_deepspeech", |bench| {
        bench.iter(|| topology_cost(&graph, &machine, Precision::Fp32))
    });
}

criterion_group! {
    name = engine;
    config = Criterion::default().warm_up_time(Duration::from_millis(500)).measurement_time(Duration::from_secs(3));
    targets = collectors, storage_precision, model_build, cost_model
}
criterion_main!(engine);
