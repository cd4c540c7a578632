// SPDX-License-Identifier: Apache-2.0

//! Sequential scatter against the cell-parallel pillar encoder.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semfuse_core::paint::{LidarPoint, PaintLabel, SemanticPointCloud};
use semfuse_core::pillar::{pillarize, pillarize_sequential, PillarSpec};

fn cloud(n: usize) -> SemanticPointCloud {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let pts = (0..n)
        .map(|_| {
            LidarPoint::new(
                r.random_range(-60.0..60.0),
                r.random_range(-60.0..60.0),
                r.random_range(-2.0..4.0),
                0.0,
                r.random_range(0.0..1.0),
            )
        })
        .collect();
    let labels = (0..n)
        .map(|_| match r.random_bool(0.2) {
            true => PaintLabel {
                category: Some(r.random_range(0..10)),
                score: r.random_range(0.01..1.0),
            },
            false => PaintLabel::default(),
        })
        .collect();
    SemanticPointCloud::new(pts, labels, 10).unwrap()
}

fn bench_pillar(c: &mut Criterion) {
    let spec = PillarSpec::default();
    let mut group = c.benchmark_group("pillarize");
    group.sample_size(10);
    for n in [30_000usize, 300_000] {
        let pc = cloud(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::new("sequential", n), &pc, |b, pc| {
            b.iter(|| pillarize_sequential(black_box(pc), &spec).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", n), &pc, |b, pc| {
            b.iter(|| pillarize(black_box(pc), &spec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pillar);
criterion_main!(benches);
