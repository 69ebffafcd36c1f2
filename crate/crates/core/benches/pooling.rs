use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use smp_core::grad::{Operator, SmpOperator};
use smp_core::rng;
use smp_core::smp::sap_forward_with;
use smp_core::{Exec, MomentSpec, NormKind, PoolSpec, Smp, Tensor};

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn input(shape: Vec<usize>) -> Tensor {
    let mut r = rng::stream(1, 0);
    Tensor::from_fn(shape, |_| rng::unit(&mut r)).unwrap()
}

fn forward(c: &mut Criterion) {
    let x = input(vec![4, 32, 32, 32]);
    let pool = PoolSpec::new(3, 3).with_stride(2, 2).with_padding(1, 1);
    let mut group = c.benchmark_group("forward");
    for (name, exec) in EXECS {
        group.bench_function(BenchmarkId::new("sap", name), |b| {
            b.iter(|| sap_forward_with(black_box(&x), &pool, exec).unwrap())
        });
        for order in [2, 4] {
            let smp = Smp::new(pool, MomentSpec::new(order, NormKind::Layer).unwrap()).with_exec(exec);
            group.bench_function(BenchmarkId::new(format!("smp{order}"), name), |b| {
                b.iter(|| smp.forward(black_box(&x)).unwrap())
            });
        }
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let x = input(vec![4, 32, 32, 32]);
    let pool = PoolSpec::new(3, 3).with_stride(2, 2).with_padding(1, 1);
    let mut group = c.benchmark_group("backward");
    for (name, exec) in EXECS {
        let smp = Smp::new(pool, MomentSpec::new(4, NormKind::Layer).unwrap()).with_exec(exec);
        let up = input(smp.shape(x.shape()).unwrap().output_shape());
        let op = SmpOperator::new(smp);
        group.bench_function(BenchmarkId::new("smp4", name), |b| b.iter(|| op.backward(black_box(&x), &up).unwrap()));
    }
    group.finish();
}

fn global(c: &mut Criterion) {
    let x = input(vec![1, 512, 33, 60]);
    let pool = PoolSpec::global(33, 60);
    let mut group = c.benchmark_group("global");
    for (name, exec) in EXECS {
        let smp = Smp::new(pool, MomentSpec::new(4, NormKind::Layer).unwrap()).with_exec(exec);
        group.bench_function(BenchmarkId::new("smp4", name), |b| b.iter(|| smp.forward(black_box(&x)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, forward, backward, global);
criterion_main!(benches);
