use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctgeo::align::{coarse_align, ground_truth_inputs, AlignConfig};
use ctgeo::events::{voxelize, Event, EventStream};
use ctgeo::par::force_sequential;
use ctgeo::scene::{generate_sequence, SceneConfig};
use ctgeo::tensor::{Graph, Tensor};

const PATHS: [(&str, bool); 2] = [("parallel", false), ("sequential", true)];

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 256;
    let a = Tensor::<f32>::from_fn(&[n, n], |_| rng.random_range(-1.0..1.0));
    let b = Tensor::<f32>::from_fn(&[n, n], |_| rng.random_range(-1.0..1.0));
    let mut group = c.benchmark_group("matmul_256");
    for (name, seq) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            force_sequential(seq);
            bench.iter(|| {
                let g = Graph::<f32>::new();
                let out = g.constant(a.clone()).matmul(g.constant(b.clone())).unwrap();
                black_box(out.value().data()[0])
            })
        });
    }
    force_sequential(false);
    group.finish();
}

fn voxel(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut events: Vec<Event> = (0..200_000)
        .map(|_| Event {
            t: rng.random(),
            x: rng.random_range(0..64),
            y: rng.random_range(0..64),
            polarity: if rng.random() { 1 } else { -1 },
        })
        .collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    let stream = EventStream::new(64, 64, 0.0, 1.0, events).unwrap();
    let mut group = c.benchmark_group("voxelize_200k");
    for (name, seq) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            force_sequential(seq);
            bench.iter(|| black_box(voxelize(&stream, 5).unwrap().total()))
        });
    }
    force_sequential(false);
    group.finish();
}

fn render(c: &mut Criterion) {
    let config = SceneConfig {
        frames: 8,
        ..SceneConfig::default()
    };
    let mut group = c.benchmark_group("render_8_frames");
    group.sample_size(10);
    for (name, seq) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            force_sequential(seq);
            bench.iter(|| black_box(generate_sequence(&config).unwrap().events.len()))
        });
    }
    force_sequential(false);
    group.finish();
}

fn align(c: &mut Criterion) {
    let seq = generate_sequence(&SceneConfig {
        frames: 9,
        ..SceneConfig::default()
    })
    .unwrap();
    let kept: Vec<usize> = (0..seq.len()).step_by(2).collect();
    let graph = ground_truth_inputs(&seq, &kept, true).unwrap().build().unwrap();
    let config = AlignConfig {
        iterations: 50,
        ..AlignConfig::default()
    };
    let mut group = c.benchmark_group("coarse_align_50_iters");
    group.sample_size(10);
    for (name, seq) in PATHS {
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            force_sequential(seq);
            bench.iter(|| black_box(coarse_align(&graph, &config).unwrap().scale_ref))
        });
    }
    force_sequential(false);
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().measurement_time(Duration::from_secs(3)).warm_up_time(Duration::from_secs(1));
    targets = matmul, voxel, render, align
}
criterion_main!(benches);
