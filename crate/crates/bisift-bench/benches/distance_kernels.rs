use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bisift::distance::{
    euclidean, euclidean_int, hamming_lookup, hamming_naive, nearest_neighbor_float,
    nearest_neighbor_hamming, nearest_neighbor_int, DistanceKind,
};
use bisift_bench::bench_descriptors;

fn pairwise_kernels(c: &mut Criterion) {
    let data = bench_descriptors(2);
    let mut group = c.benchmark_group("pairwise");
    group.bench_function("float_l2", |b| {
        b.iter(|| euclidean(black_box(&data.float[0]), black_box(&data.float[1])))
    });
    group.bench_function("int_l2", |b| {
        b.iter(|| euclidean_int(black_box(&data.int[0]), black_box(&data.int[1])))
    });
    group.bench_function("hamming_naive", |b| {
        b.iter(|| hamming_naive(black_box(&data.binary[0]), black_box(&data.binary[1])).unwrap())
    });
    group.bench_function("hamming_lookup", |b| {
        b.iter(|| hamming_lookup(black_box(&data.binary[0]), black_box(&data.binary[1])).unwrap())
    });
    group.finish();
}

fn nn_scans(c: &mut Criterion) {
    let mut group = c.benchmark_group("nn_scan");
    group.sample_size(20);
    for size in [1_000usize, 10_000] {
        let data = bench_descriptors(size + 1);
        let (q_float, db_float) = data.float.split_first().unwrap();
        let (q_int, db_int) = data.int.split_first().unwrap();
        let (q_bin, db_bin) = data.binary.split_first().unwrap();
        group.bench_with_input(BenchmarkId::new("float_l2", size), &size, |b, _| {
            b.iter(|| nearest_neighbor_float(black_box(q_float), black_box(db_float)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("int_l2", size), &size, |b, _| {
            b.iter(|| nearest_neighbor_int(black_box(q_int), black_box(db_int)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hamming_naive", size), &size, |b, _| {
            b.iter(|| {
                nearest_neighbor_hamming(
                    black_box(q_bin),
                    black_box(db_bin),
                    DistanceKind::HammingNaive,
                )
                .unwrap()
            })
        });
        group.bench_with_input(BenchmarkId::new("hamming_lookup", size), &size, |b, _| {
            b.iter(|| {
                nearest_neighbor_hamming(
                    black_box(q_bin),
                    black_box(db_bin),
                    DistanceKind::HammingLookup,
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, pairwise_kernels, nn_scans);
criterion_main!(benches);
