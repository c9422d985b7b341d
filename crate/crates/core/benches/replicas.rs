use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use reflected_walk::forest::wilson_sample;
use reflected_walk::graph::{ball, Exhaustion, Tree, VertexKey};
use reflected_walk::par;
use reflected_walk::walk::{build_kernel, simulate, KernelConfig, RateSchedule, StopRule};

fn replicas(c: &mut Criterion) {
    let tree = Tree::regular(3).unwrap();
    let kernel = build_kernel(&tree, &Exhaustion::Ball, 5, &KernelConfig::default()).unwrap();
    let order: Vec<VertexKey> = ball(&tree, 5).into_iter().map(|(k, _)| k).collect();
    let stop = StopRule::HitSet(vec![4, 8, 12]);
    let rates = RateSchedule::default();

    let mut group = c.benchmark_group("hitting_walks");
    for reps in [256u64, 2048] {
        group.bench_with_input(BenchmarkId::new("sequential", reps), &reps, |b, &n| {
            b.iter(|| {
                par::map_replicas_seq(n, |r| {
                    simulate(&kernel, 5, &stop, &rates, 1, r, usize::MAX).unwrap().steps
                })
            })
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", reps), &reps, |b, &n| {
            b.iter(|| {
                par::map_replicas_par(n, |r| {
                    simulate(&kernel, 5, &stop, &rates, 1, r, usize::MAX).unwrap().steps
                })
            })
        });
    }
    group.finish();

    let mut group = c.benchmark_group("wilson_forests");
    group.sample_size(10);
    let reps = 64u64;
    group.bench_function("sequential", |b| {
        b.iter(|| par::map_replicas_seq(reps, |r| black_box(wilson_sample(&kernel, &order, 2, r, usize::MAX).unwrap().steps)))
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| par::map_replicas_par(reps, |r| black_box(wilson_sample(&kernel, &order, 2, r, usize::MAX).unwrap().steps)))
    });
    group.finish();
}

criterion_group!(benches, replicas);
criterion_main!(benches);
