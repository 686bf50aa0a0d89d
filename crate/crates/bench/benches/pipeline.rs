use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gantrylab_bench::{board_view, spodumene_shot};
use gantrylab_core::protocol::{decode_message, encode_message};
use gantrylab_core::scan::plan_grid;
use gantrylab_core::sim::LineDb;
use gantrylab_core::spectral::{reduce_spectrum, subtract_background, ReductionConfig};
use gantrylab_core::vision::estimate_extrinsics;

fn grid(c: &mut Criterion) {
    c.bench_function("plan_grid 4x10@0.2", |b| b.iter(|| plan_grid(black_box([100.0, 100.0]), black_box([4.0, 10.0]), 0.2).unwrap()));
}

fn spectra(c: &mut Criterion) {
    let s = spodumene_shot();
    let db = LineDb::bundled();
    let cfg = ReductionConfig::default();
    c.bench_function("subtract_background", |b| b.iter(|| subtract_background(black_box(&s.intensities), cfg.background_window).unwrap()));
    c.bench_function("reduce_spectrum", |b| b.iter(|| reduce_spectrum(black_box(&s), &db, &cfg).unwrap()));
}

fn vision(c: &mut Criterion) {
    let (corrs, k) = board_view();
    c.bench_function("estimate_extrinsics 35 points", |b| b.iter(|| estimate_extrinsics(black_box(&corrs), &k).unwrap()));
}

fn wire(c: &mut Criterion) {
    let frame = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/wire/status_event.json")).unwrap();
    let m = decode_message(frame.trim().as_bytes()).unwrap();
    c.bench_function("decode status event", |b| b.iter(|| decode_message(black_box(frame.trim().as_bytes())).unwrap()));
    c.bench_function("encode status event", |b| b.iter(|| encode_message(black_box(&m)).unwrap()));
}

criterion_group!(benches, grid, spectra, vision, wire);
criterion_main!(benches);
