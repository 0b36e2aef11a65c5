use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use qpgap::cocycle::Cocycle;
use qpgap::duality::{find_bloch, BlochOptions};
use qpgap::fourier::ScalarMap;
use qpgap::reducibility::{solve_homological_scalar, DIVISOR_CUTOFF};
use qpgap::spectrum::{band_structure, BandOptions};
use qpgap::{estimate_beta, Frequency};

fn benches(c: &mut Criterion) {
    let f = ScalarMap::amo();
    let alpha = Frequency::golden(40).value();

    c.bench_function("band_structure q=89", |b| {
        b.iter(|| band_structure(black_box(0.25), &f, 55, 89, &BandOptions::for_q(89)).unwrap())
    });
    c.bench_function("rotation_number 1e5 steps", |b| {
        let cocycle = Cocycle::amo(alpha, 0.25, -0.5);
        b.iter(|| cocycle.rotation_number(black_box(100_000), 0.0).unwrap())
    });
    c.bench_function("homological scalar band 64", |b| {
        let cos: Vec<f64> = (1..=64).map(|k| (-0.1 * k as f64).exp()).collect();
        let nu = ScalarMap::trig(0.0, &cos, &cos);
        b.iter(|| solve_homological_scalar(black_box(&nu), alpha, 1, DIVISOR_CUTOFF).unwrap())
    });
    c.bench_function("find_bloch N=128", |b| {
        let opts = BlochOptions { truncation: 128, ..BlochOptions::default() };
        b.iter(|| find_bloch(0.25, &f, alpha, black_box(-0.501484), 128, &opts).unwrap())
    });
    c.bench_function("estimate_beta golden", |b| {
        let freq = Frequency::golden(60);
        b.iter(|| estimate_beta(black_box(&freq), 1_000_000_000).unwrap())
    });
}

criterion_group! {
    name = core;
    config = Criterion::default().sample_size(10);
    targets = benches
}
criterion_main!(core);
