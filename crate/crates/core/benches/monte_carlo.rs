use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsse::harness::{run_scenario, Method, RunSettings};
use dsse::measurement::MeasurementPlan;
use dsse::network::load_network;
use dsse::parallel::Execution;

fn data(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ieee123").join(file)
}

fn bench_execution(c: &mut Criterion) {
    let net = load_network(data("network.json")).expect("network loads");
    let plan = MeasurementPlan::load(data("plan.json")).expect("plan loads");
    let mut group = c.benchmark_group("monte_carlo_ieee123");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        let settings = RunSettings {
            steps: 2,
            trials: 4,
            seed: 1,
            methods: vec![Method::Prior, Method::Post, Method::PostNl],
            execution: exec,
            ..RunSettings::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &settings, |b, s| {
            b.iter(|| run_scenario(&net, &plan, s).expect("scenario runs"))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_execution);
criterion_main!(benches);
