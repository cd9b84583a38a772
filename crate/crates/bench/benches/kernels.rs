use std::hint::black_box;

use avsv_core::data::{generate_synthetic_dataset, sample_batch, Sampling, SynthConfig};
use avsv_core::losses::{ge2e_forward_backward, Ge2eConfig, Ge2eParams};
use avsv_core::metrics::{eer, ClusterIndices, TrialScore};
use avsv_core::model::{objective, Model, ModelDims, ObjectiveConfig};
use avsv_core::nn::Matrix;
use avsv_core::testkit::gaussian_matrix;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = gaussian_matrix(rows, cols, rng);
    for r in 0..rows {
        let row = m.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= n);
    }
    m
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = gaussian_matrix(32, 512, &mut rng);
    let w = gaussian_matrix(512, 512, &mut rng);
    c.bench_function("matmul_transpose_b 32x512 . 512x512", |b| {
        b.iter(|| black_box(&x).matmul_transpose_b(black_box(&w)).unwrap())
    });
}

fn ge2e(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = unit_rows(32, 1024, &mut rng);
    c.bench_function("ge2e_forward_backward N=8 M=4 d=1024", |b| {
        b.iter(|| {
            ge2e_forward_backward(
                black_box(&e),
                8,
                4,
                Ge2eParams::default(),
                Ge2eConfig::default(),
            )
            .unwrap()
        })
    });
}

fn training_step(c: &mut Criterion) {
    let data = generate_synthetic_dataset(&SynthConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::init(ModelDims::default(), &mut rng);
    let batch = sample_batch(&data, 8, 4, Sampling::Unsynchronized, &mut rng).unwrap();
    let audio =
        Matrix::from_rows(&batch.pairs.iter().map(|p| &p.audio[..]).collect::<Vec<_>>()).unwrap();
    let visual = Matrix::from_rows(
        &batch
            .pairs
            .iter()
            .map(|p| &p.visual[..])
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let cfg = ObjectiveConfig::default();
    c.bench_function("objective forward+backward, full dims, N=8 M=4", |b| {
        b.iter(|| objective(&model, &audio, &visual, 8, 4, &batch.age_labels, &cfg).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<TrialScore> = (0..10_000)
        .map(|_| {
            let t = rng.gen_bool(0.5);
            TrialScore::new(t, rng.gen_range(-1.0..1.0) + if t { 0.5 } else { 0.0 })
        })
        .collect();
    c.bench_function("eer 10k trials", |b| {
        b.iter(|| eer(black_box(&scores)).unwrap())
    });

    let points = unit_rows(200, 512, &mut rng);
    let labels: Vec<usize> = (0..200).map(|i| i / 10).collect();
    c.bench_function("cluster indices 200x512, 20 clusters", |b| {
        b.iter(|| ClusterIndices::compute(black_box(&points), &labels).unwrap())
    });
}

criterion_group!(benches, matmul, ge2e, training_step, metrics);
criterion_main!(benches);
