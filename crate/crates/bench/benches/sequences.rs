use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctgru_bench::fixture;
use ctgru_core::autodiff::{forward_sequence, sequence_gradient};
use ctgru_core::Arch;

fn sequences(c: &mut Criterion) {
    let mut group = c.benchmark_group("sequence-100");
    for arch in [Arch::Gru, Arch::CtGru] {
        let (model, seq) = fixture(arch, 100);
        group.bench_with_input(BenchmarkId::new("forward", arch.name()), &arch, |b, _| {
            b.iter(|| forward_sequence(black_box(&model), black_box(&seq)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gradient", arch.name()), &arch, |b, _| {
            b.iter(|| sequence_gradient(black_box(&model), black_box(&seq)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sequences);
criterion_main!(benches);
