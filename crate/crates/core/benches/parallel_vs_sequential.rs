use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use delaytrack::harness::run::{run_monte_carlo, Prepared};
use delaytrack::harness::Scenario;
use delaytrack::par::Execution;

fn monte_carlo(c: &mut Criterion) {
    let mut s = Scenario::default();
    s.steps = 200;
    s.trials = 16;
    s.delay.tau_bar = 5;
    let p = Prepared::new(&s).expect("bench scenario");
    let gains = p.resolve_gains().expect("bench gains").gains;

    let mut group = c.benchmark_group("monte_carlo_16x200");
    group.sample_size(10);
    for (name, mode) in [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ] {
        group.bench_with_input(BenchmarkId::from_parameter(name), &mode, |b, &mode| {
            b.iter(|| run_monte_carlo(black_box(&p), &gains, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo);
criterion_main!(benches);
