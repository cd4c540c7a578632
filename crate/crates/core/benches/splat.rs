// SPDX-License-Identifier: Apache-2.0

//! Sequential scatter against the cell-parallel splat.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semfuse_core::view::{splat_pool_bucketed, splat_pool_sequential, PseudoPointSet};
use semfuse_core::BevLayout;

fn points(n: usize, channels: usize) -> PseudoPointSet {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let pos = (0..n)
        .map(|_| Vector3::new(r.random_range(-60.0..60.0), r.random_range(-60.0..60.0), 0.0))
        .collect();
    let w = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let f = (0..n)
        .map(|_| (0..channels).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    PseudoPointSet::from_points(pos, w, f).unwrap()
}

fn bench_splat(c: &mut Criterion) {
    let layout = BevLayout::default();
    let channels = 32;
    let mut group = c.benchmark_group("splat");
    group.sample_size(10);
    for n in [100_000usize, 1_000_000] {
        let pp = points(n, channels);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("sequential", n), &pp, |b, pp| {
            b.iter(|| splat_pool_sequential(black_box(pp), &layout, channels).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &pp, |b, pp| {
            b.iter(|| splat_pool_bucketed(black_box(pp), &layout, channels).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_splat);
criterion_main!(benches);
