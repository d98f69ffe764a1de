use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use bisift::distance::{euclidean, hamming_lookup};
use bisift::matching::match_images;
use bisift_bench::bench_descriptors;

fn image_matching(c: &mut Criterion) {
    let data = bench_descriptors(500);
    let q_float = &data.float[..200];
    let r_float = &data.float[200..];
    let q_bin = &data.binary[..200];
    let r_bin = &data.binary[200..];

    let mut group = c.benchmark_group("match_200x300");
    group.sample_size(30);
    group.bench_function("float_l2", |b| {
        b.iter(|| match_images(black_box(q_float), black_box(r_float), euclidean, 0.8))
    });
    group.bench_function("hamming_lookup", |b| {
        b.iter(|| {
            match_images(
                black_box(q_bin),
                black_box(r_bin),
                |a, x| hamming_lookup(a, x).unwrap() as f64,
                0.8,
            )
        })
    });
    group.finish();
}

criterion_group!(benches, image_matching);
criterion_main!(benches);
