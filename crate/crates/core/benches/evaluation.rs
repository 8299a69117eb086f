use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slicescale::harness::{evaluate, pred_alloc_checkpoint, EvalSpec, Execution, ExperimentConfig, TrafficSpec};
use slicescale::network_model::default_synthetic_model;

fn bench_evaluation(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let model = Arc::new(default_synthetic_model());
    let ck = pred_alloc_checkpoint(&cfg, &model).unwrap();
    let spec = EvalSpec {
        episode: cfg.episode.clone(),
        traffic: TrafficSpec::default(),
        predictor: cfg.predictor,
        condition: cfg.episode.condition,
        episodes: 64,
        seed: 3,
    };
    let mut group = c.benchmark_group("evaluate_64_episodes");
    for (name, exec) in [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate(&ck, model.clone(), &spec, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_evaluation);
criterion_main!(benches);
