use std::hint::black_box;
use std::thread::available_parallelism;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use stale_ipm::config::RunConfig;
use stale_ipm::engine::{monte_carlo_with_dataset, prepare_dataset, Execution};

/// Monte Carlo throughput: replicas run one after another versus spread over
/// a rayon pool. Both produce identical summaries.
fn bench_replicas(c: &mut Criterion) {
    let mut cfg = RunConfig::baseline();
    cfg.horizon = 400;
    let dataset = prepare_dataset(&cfg).expect("baseline dataset");
    let jobs = available_parallelism().map_or(1, |n| n.get()).max(2);
    let reps = 32;

    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (name, exec) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel { jobs }),
    ] {
        group.bench_with_input(BenchmarkId::new(name, reps), &exec, |b, &exec| {
            b.iter(|| black_box(monte_carlo_with_dataset(&cfg, &dataset, reps, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_replicas);
criterion_main!(benches);
