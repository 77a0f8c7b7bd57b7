use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use drivesynth_core::fidelity::ks_complement;
use drivesynth_core::neighbors::KdTree;
use drivesynth_core::nn::{backward, forward, Activation, DenseLayer, Matrix};
use drivesynth_core::transform::em_fit;
use drivesynth_core::{generate_surrogate, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn kd_tree(c: &mut Criterion) {
    let dim = 7;
    let points = uniform(20_000 * dim, 1);
    let queries = uniform(2_000 * dim, 2);
    c.bench_function("kd_tree build 20k x 7", |b| {
        b.iter_batched(|| points.clone(), |p| KdTree::new(p, dim).unwrap(), BatchSize::LargeInput)
    });
    let tree = KdTree::new(points, dim).unwrap();
    c.bench_function("kd_tree 2-nn 2k queries", |b| b.iter(|| tree.nearest_all(black_box(&queries), 2)));
}

fn ks(c: &mut Criterion) {
    let (a, b_) = (uniform(20_000, 3), uniform(20_000, 4));
    c.bench_function("ks_complement 20k vs 20k", |b| b.iter(|| ks_complement(black_box(&a), black_box(&b_)).unwrap()));
}

fn em(c: &mut Criterion) {
    let table = generate_surrogate(20_000, 5).unwrap();
    let lat = table.continuous("latitude").unwrap().to_vec();
    c.bench_function("em_fit k=10 20k rows", |b| b.iter(|| em_fit(black_box(&lat), 10, 0, 100, 1e-6).unwrap()));
}

fn dense(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layers = vec![
        DenseLayer::new(40, 128, Activation::Relu, &mut rng),
        DenseLayer::new(128, 128, Activation::Relu, &mut rng),
        DenseLayer::new(128, 40, Activation::Identity, &mut rng),
    ];
    let x = Matrix::from_vec(500, 40, uniform(500 * 40, 7)).unwrap();
    let grad = Matrix::from_vec(500, 40, uniform(500 * 40, 8)).unwrap();
    c.bench_function("mlp forward+backward batch 500", |b| {
        b.iter(|| {
            let (out, cache) = forward(&layers, black_box(&x)).unwrap();
            black_box(out);
            backward(&layers, &cache, &grad).unwrap()
        })
    });
}

fn sample(c: &mut Criterion) {
    let table = generate_surrogate(2_000, 9).unwrap();
    let config = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let (model, _) = train(&table, &config).unwrap();
    c.bench_function("sample 20k rows", |b| b.iter(|| model.sample(20_000, black_box(1)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kd_tree, ks, em, dense, sample
}
criterion_main!(benches);
