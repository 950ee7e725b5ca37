use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sanne::encoder::EncoderConfig;
use sanne::exec::Execution;
use sanne::infer::{infer_embeddings, InferConfig};
use sanne::trainer::{batch_gradients, initial_params, prepare_batch, TrainConfig};
use sanne::walks::sample_walks;
use sanne_testkit::graphs::{random_features, random_graph};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn config() -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig { dim: 64, heads: 4, ff_hidden: 256, ..EncoderConfig::default() },
        candidates: 256,
        ..TrainConfig::default()
    }
}

fn walks(c: &mut Criterion) {
    let g = random_graph(2000, 0.002, 1);
    let mut group = c.benchmark_group("sample_walks");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_walks(&g, 16, 8, 7, exec).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let g = random_graph(500, 0.01, 2);
    let config = config();
    let features = random_features(500, 64, 3);
    let params = initial_params(&g, &config).unwrap();
    let set = sample_walks(&g, 1, 8, 4, Execution::Sequential).unwrap();
    let batch_walks = set.walks.iter().take(64).map(|w| w.nodes.clone()).collect();
    let batch = prepare_batch(&g, batch_walks, &config, 0, 0).unwrap();
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradients(&params, &batch, &features, config.micro_batch, exec).unwrap())
        });
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let g = random_graph(500, 0.01, 5);
    let config = config();
    let features = random_features(500, 64, 6);
    let params = initial_params(&g, &config).unwrap();
    let nodes: Vec<usize> = (0..256).collect();
    let mut group = c.benchmark_group("infer_embeddings");
    group.sample_size(10);
    for (name, exec) in MODES {
        let ic = InferConfig { execution: exec, ..InferConfig::default() };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| infer_embeddings(&params, &g, &features, &nodes, &ic).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, walks, gradients, inference);
criterion_main!(benches);
