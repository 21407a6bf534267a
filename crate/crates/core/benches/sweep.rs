use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kyfan_core::lab::{self, Method, SweepPlan, TrialConfig};
use kyfan_core::Parallelism;

fn small_sweep(c: &mut Criterion) {
    let plan = SweepPlan::over_s(10, 8, 1, &[30, 50, 80], 4, vec![Method::Nuclear, Method::K2FromZero], 7);
    let cfg = TrialConfig {
        record_timing: false,
        ..TrialConfig::default()
    };
    let mut group = c.benchmark_group("sweep_10x8");
    group.sample_size(10);
    for (label, par) in [("sequential", Parallelism::Sequential), ("threads", Parallelism::Threads(0))] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &par, |b, &par| {
            b.iter(|| lab::run_sweep(&plan, &cfg, par).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, small_sweep);
criterion_main!(benches);
