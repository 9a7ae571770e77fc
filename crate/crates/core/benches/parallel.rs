use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fluidq::jumps::solve_jumps;
use fluidq::models::{build_lcfs, lcfs_loss_probability, presets};
use fluidq::par::map_slice;
use fluidq::sim::{simulate, SimConfig};
use fluidq::Execution;

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn replications(c: &mut Criterion) {
    let spec = presets::bursty_lcfs(0.9, Some(10), Some(8)).unwrap();
    let jm = build_lcfs(&spec).unwrap();
    let mut group = c.benchmark_group("simulate_replications");
    group.sample_size(10);
    for (name, execution) in POLICIES {
        let cfg = SimConfig { horizon: 2e4, warmup: 100.0, replications: 16, seed: 7, execution, ..Default::default() };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| simulate(&jm, cfg).unwrap())
        });
    }
    group.finish();
}

fn capacity_sweep(c: &mut Criterion) {
    let sizes: Vec<usize> = (1..=16).map(|k| 10 * k).collect();
    let mut group = c.benchmark_group("lcfs_capacity_sweep");
    group.sample_size(10);
    for (name, execution) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| {
                map_slice(&sizes, execution, |&n| {
                    let spec = presets::bursty_lcfs(1.0, Some(n), Some(n)).unwrap();
                    let js = solve_jumps(&build_lcfs(&spec).unwrap()).unwrap();
                    lcfs_loss_probability(&js, &spec).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, replications, capacity_sweep);
criterion_main!(benches);
